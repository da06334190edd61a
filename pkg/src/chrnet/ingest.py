"""Load externally supplied datasets into the internal manifest format.

Expected inputs: a directory of images, a label CSV (``sample_id`` plus one
binary column per prohibited class), and optionally a bbox CSV
(``sample_id,x_min,y_min,x_max,y_max,class``). Rows whose image file is
missing are skipped and counted.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import BBox, CLASS_NAMES, DatasetManifest, LabelVector, ManifestEntry
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_CLASS_MAP = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass
class IngestConfig:
    image_dir: Path
    label_csv: Path
    bbox_csv: Optional[Path] = None
    class_map: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CLASS_MAP))
    image_ext: str = ".png"
    split_tag: str = "train"

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.label_csv = Path(self.label_csv)
        if self.bbox_csv is not None:
            self.bbox_csv = Path(self.bbox_csv)
        if set(self.class_map) != set(CLASS_NAMES):
            raise DataError(
                f"class map must cover exactly {sorted(CLASS_NAMES)}, "
                f"got {sorted(self.class_map)}"
            )
        if sorted(self.class_map.values()) != list(range(len(CLASS_NAMES))):
            raise DataError(f"class map indices must be 0..{len(CLASS_NAMES) - 1}")


def _read_bboxes(config: IngestConfig) -> dict[str, list[BBox]]:
    boxes: dict[str, list[BBox]] = {}
    with open(config.bbox_csv, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        expected = {"sample_id", "x_min", "y_min", "x_max", "y_max", "class"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DataError(
                f"{config.bbox_csv}: header must contain {sorted(expected)}"
            )
        for lineno, row in enumerate(reader, start=2):
            name = row["class"].strip()
            if name not in config.class_map:
                raise DataError(f"{config.bbox_csv}:{lineno}: unknown class {name!r}")
            try:
                bbox = BBox(
                    int(row["x_min"]), int(row["y_min"]),
                    int(row["x_max"]), int(row["y_max"]),
                    config.class_map[name],
                )
            except (ValueError, DataError) as e:
                raise DataError(f"{config.bbox_csv}:{lineno}: bad bbox row ({e})") from e
            boxes.setdefault(row["sample_id"].strip(), []).append(bbox)
    return boxes


def ingest(config: IngestConfig) -> DatasetManifest:
    """Build a manifest from CSV label/bbox tables and an image directory."""
    if not config.label_csv.is_file():
        raise DataError(f"label table not found: {config.label_csv}")
    if not config.image_dir.is_dir():
        raise DataError(f"image directory not found: {config.image_dir}")
    boxes = _read_bboxes(config) if config.bbox_csv else {}

    index_of = config.class_map
    columns = sorted(index_of, key=index_of.get)
    entries: list[ManifestEntry] = []
    skipped = 0
    with open(config.label_csv, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "sample_id" not in reader.fieldnames:
            raise DataError(f"{config.label_csv}: header must contain sample_id")
        missing_cols = [c for c in columns if c not in reader.fieldnames]
        if missing_cols:
            raise DataError(f"{config.label_csv}: missing class columns {missing_cols}")
        for lineno, row in enumerate(reader, start=2):
            sample_id = (row["sample_id"] or "").strip()
            if not sample_id:
                raise DataError(f"{config.label_csv}:{lineno}: empty sample_id")
            try:
                values = tuple(int(row[c]) for c in columns)
            except (TypeError, ValueError) as e:
                raise DataError(
                    f"{config.label_csv}:{lineno}: malformed label row ({e})"
                ) from e
            image_name = sample_id + config.image_ext
            if not (config.image_dir / image_name).is_file():
                skipped += 1
                continue
            rel = Path(config.image_dir.name) / image_name
            entries.append(
                ManifestEntry(
                    sample_id=sample_id,
                    image=str(rel),
                    labels=LabelVector(values, len(CLASS_NAMES)),
                    bboxes=tuple(boxes.get(sample_id, ())),
                    split=config.split_tag,
                )
            )
    if skipped:
        logger.warning("ingest: skipped %d rows with missing image files", skipped)
    return DatasetManifest(
        entries, split_tag=config.split_tag, seed=0, root=config.image_dir.parent
    )
