"""Core domain types: label vectors, boxes, samples, and dataset manifests.

All types are immutable after construction and carry no learning logic.
The on-disk manifest format is JSON-lines, one object per sample with keys
``sample_id``, ``image``, ``labels``, ``bboxes``, ``split``; it round-trips
labels and boxes bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

# Prohibited item classes, in canonical column order (class_id 0..4).
CLASS_NAMES = ("gun", "knife", "wrench", "pliers", "scissors")
NUM_PROHIBITED = len(CLASS_NAMES)


@dataclass(frozen=True)
class LabelVector:
    """Binary multi-label ground truth.

    ``values`` has one entry per class in the label space; only the first
    ``prohibited_count`` entries are observed ground truth, the rest are
    treated as unobserved (masked out of every loss, never coerced to 0).
    """

    values: tuple[int, ...]
    prohibited_count: int = NUM_PROHIBITED

    def __post_init__(self):
        if not all(v in (0, 1) for v in self.values):
            raise DataError(f"label entries must be 0/1, got {self.values}")
        if not 1 <= self.prohibited_count <= len(self.values):
            raise DataError(
                f"prohibited_count {self.prohibited_count} outside "
                f"[1, {len(self.values)}]"
            )

    @property
    def observed(self) -> tuple[int, ...]:
        return self.values[: self.prohibited_count]

    @property
    def observed_mask(self) -> tuple[bool, ...]:
        return tuple(i < self.prohibited_count for i in range(len(self.values)))

    def is_positive(self) -> bool:
        return any(self.observed)


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box [x_min, x_max) x [y_min, y_max) for one class."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    class_id: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DataError(f"degenerate bbox {self}")
        if min(self.x_min, self.y_min) < 0:
            raise DataError(f"bbox {self} has negative coordinates")
        if self.class_id < 0:
            raise DataError(f"bbox {self} has negative class_id")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def as_row(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max, self.class_id]

    @staticmethod
    def from_row(row: Sequence[int]) -> "BBox":
        if len(row) != 5:
            raise DataError(f"bbox row must have 5 fields, got {row}")
        return BBox(int(row[0]), int(row[1]), int(row[2]), int(row[3]), int(row[4]))


@dataclass(frozen=True, eq=False)
class Sample:
    """One image with its labels and (optionally) prohibited-item boxes."""

    image: np.ndarray  # H x W x 3 float array in [0, 1]
    labels: LabelVector
    sample_id: str
    bboxes: tuple[BBox, ...] = ()

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(f"sample {self.sample_id}: image must be HxWx3")
        h, w = img.shape[:2]
        for b in self.bboxes:
            if b.x_max > w or b.y_max > h:
                raise DataError(f"sample {self.sample_id}: bbox {b} outside image")
            if b.class_id >= self.labels.prohibited_count:
                raise DataError(
                    f"sample {self.sample_id}: bbox class {b.class_id} is not "
                    "a prohibited class"
                )
            if self.labels.values[b.class_id] != 1:
                raise DataError(
                    f"sample {self.sample_id}: bbox for class {b.class_id} "
                    "but label entry is 0"
                )
        img.setflags(write=False)


def is_positive(sample: Sample) -> bool:
    """True iff any prohibited-class label entry equals 1."""
    return sample.labels.is_positive()


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image: str  # path relative to the manifest's directory
    labels: LabelVector
    bboxes: tuple[BBox, ...]
    split: str

    def is_positive(self) -> bool:
        return self.labels.is_positive()

    def to_json_line(self) -> str:
        obj = {
            "sample_id": self.sample_id,
            "image": self.image,
            "labels": list(self.labels.values),
            "bboxes": [b.as_row() for b in self.bboxes],
            "split": self.split,
        }
        return json.dumps(obj, separators=(",", ":"))


@dataclass
class DatasetManifest:
    """An ordered collection of manifest entries plus split/seed metadata.

    ``root`` is the directory image paths are resolved against; it is set
    when a manifest is loaded from disk and may be None for in-memory pools.
    """

    entries: list[ManifestEntry]
    split_tag: str = "train"
    seed: int = 0
    root: Optional[Path] = None

    def __post_init__(self):
        if self.split_tag not in ("train", "test"):
            raise DataError(f"split_tag must be train|test, got {self.split_tag!r}")
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate sample_ids in manifest: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.entries)

    def positives(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.is_positive()]

    def negatives(self) -> list[ManifestEntry]:
        return [e for e in self.entries if not e.is_positive()]

    def image_path(self, entry: ManifestEntry) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / entry.image

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(entry.to_json_line())
                f.write("\n")
        return path


def load_manifest(
    path: Path | str,
    prohibited_count: Optional[int] = None,
    seed: int = 0,
    check_images: bool = False,
) -> DatasetManifest:
    """Parse a JSON-lines manifest file.

    ``prohibited_count`` sets the observed prefix of each label vector;
    None means every stored entry is observed. With ``check_images`` the
    referenced files are stat'ed and missing ones raise a DataError.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from e
            try:
                labels = LabelVector(
                    tuple(int(v) for v in obj["labels"]),
                    prohibited_count
                    if prohibited_count is not None
                    else len(obj["labels"]),
                )
                entries.append(
                    ManifestEntry(
                        sample_id=str(obj["sample_id"]),
                        image=str(obj["image"]),
                        labels=labels,
                        bboxes=tuple(BBox.from_row(r) for r in obj["bboxes"]),
                        split=str(obj["split"]),
                    )
                )
            except KeyError as e:
                raise DataError(f"{path}:{lineno}: missing key {e}") from e
    splits = {e.split for e in entries}
    if len(splits) > 1:
        raise DataError(f"{path}: mixed split tags {sorted(splits)}")
    split_tag = entries[0].split if entries else "train"
    manifest = DatasetManifest(entries, split_tag=split_tag, seed=seed, root=path.parent)
    if check_images:
        missing = [e.sample_id for e in entries if not manifest.image_path(e).is_file()]
        if missing:
            raise DataError(
                f"{path}: {len(missing)} referenced images missing "
                f"(first: {missing[:3]})"
            )
    return manifest


def load_image(path: Path | str) -> np.ndarray:
    """Load an image file to float32 HxWx3 in [0, 1] (8-bit files / 255)."""
    from PIL import Image

    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(image: np.ndarray, path: Path | str) -> None:
    """Write a float [0,1] HxWx3 array as lossless PNG."""
    from PIL import Image

    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
