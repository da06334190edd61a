"""Synthetic overlapping-scene generator.

Scenes mimic transmission imagery: every placed object stays visible where
objects overlap, so a composite is modeled as a clamped per-pixel sum of
per-object sub-images over a textured background (an "attenuation" mode is
provided as a more physical alternative). Five prohibited glyph families
(one per class) plus a clutter library give visually separable classes with
randomized size, rotation, opacity, and color jitter.

Also contains the imbalanced subset builder: exactly ``ratio`` negatives per
positive, with a stratified train/test split.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    BBox,
    CLASS_NAMES,
    DatasetManifest,
    LabelVector,
    ManifestEntry,
    NUM_PROHIBITED,
    save_image,
)
from .errors import DataError

PROHIBITED_FAMILIES = ("angular-L", "blade", "open-wrench", "jaw-pair", "cross-blades")
CLUTTER_FAMILIES = ("square", "disc", "ring", "rod", "triangle", "blob", "plus")


@dataclass(frozen=True)
class GlyphSpec:
    """Parametric sampler for one object class."""

    class_id: int
    family: str
    base_color: tuple[float, float, float]
    size_range: tuple[float, float] = (14.0, 30.0)  # full extent, pixels
    rotation_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    opacity_range: tuple[float, float] = (0.55, 0.95)

    def __post_init__(self):
        if self.family not in PROHIBITED_FAMILIES + CLUTTER_FAMILIES:
            raise DataError(f"unknown glyph family {self.family!r}")
        lo, hi = self.opacity_range
        if not (0.0 < lo <= hi <= 1.0):
            raise DataError(f"opacity range {self.opacity_range} outside (0, 1]")
        if self.size_range[0] <= 0 or self.size_range[0] > self.size_range[1]:
            raise DataError(f"bad size range {self.size_range}")


@dataclass(frozen=True)
class PlacedItem:
    class_id: int
    image: np.ndarray  # H x W x 3, zero outside the glyph's support
    bbox: BBox


@dataclass
class Scene:
    """Background canvas plus placed items, composed additively or by attenuation."""

    background: np.ndarray
    items: list[PlacedItem] = field(default_factory=list)
    mode: str = "additive"

    def __post_init__(self):
        if self.mode not in ("additive", "attenuation"):
            raise DataError(f"composition mode must be additive|attenuation, got {self.mode!r}")


def _family_alpha(family: str, u: np.ndarray, v: np.ndarray, size: float) -> np.ndarray:
    """Alpha mask of one glyph family on rotated local coordinates (u, v).

    ``size`` is the full extent; box-like families use half-open bounds so an
    axis-aligned square of side s covers exactly s pixels.
    """
    a = size / 2.0
    if family == "square":
        return ((u >= -a) & (u < a) & (v >= -a) & (v < a)).astype(np.float32)
    if family == "disc":
        return (u * u + v * v <= a * a).astype(np.float32)
    if family == "ring":
        r2 = u * u + v * v
        return ((r2 <= a * a) & (r2 >= (0.62 * a) ** 2)).astype(np.float32)
    if family == "rod":
        w = max(1.2, 0.12 * a)
        return ((u >= -a) & (u < a) & (np.abs(v) <= w)).astype(np.float32)
    if family == "triangle":
        m = (v >= -0.6 * a) & (v <= 1.6 * u + 0.6 * a) & (v <= -1.6 * u + 0.6 * a)
        return m.astype(np.float32)
    if family == "blob":
        alpha = np.exp(-(u * u + v * v) / (2.0 * (0.45 * a) ** 2)).astype(np.float32)
        alpha[alpha < 0.05] = 0.0
        return alpha
    if family == "plus":
        w = max(1.2, 0.14 * a)
        bar_h = (u >= -a) & (u < a) & (np.abs(v) <= w)
        bar_v = (v >= -a) & (v < a) & (np.abs(u) <= w)
        return (bar_h | bar_v).astype(np.float32)
    if family == "angular-L":
        w = max(1.5, 0.20 * a)
        barrel = (u >= -a) & (u < a) & (v >= -w) & (v < w)
        grip = (u >= 0.5 * a) & (u < 0.5 * a + 2.2 * w) & (v >= 0) & (v < 0.95 * a)
        return (barrel | grip).astype(np.float32)
    if family == "blade":
        wb = max(2.0, 0.26 * a)
        wedge = (u >= -a) & (u <= a) & (np.abs(v) <= wb * (a - u) / (2.0 * a))
        handle = (u >= -a) & (u <= -0.58 * a) & (np.abs(v) <= 0.62 * wb)
        return (wedge | handle).astype(np.float32)
    if family == "open-wrench":
        w = max(1.4, 0.14 * a)
        shaft = (np.abs(u) <= 0.72 * a) & (np.abs(v) <= w)
        mask = shaft
        for sgn in (1.0, -1.0):
            du = u - sgn * 0.78 * a
            r2 = du * du + v * v
            jaw = (r2 <= (0.34 * a) ** 2) & (r2 >= (0.16 * a) ** 2)
            notch = (sgn * u > 0.88 * a) & (np.abs(v) < 0.15 * a)
            mask = mask | (jaw & ~notch)
        return mask.astype(np.float32)
    if family == "jaw-pair":
        b = 0.30
        w = max(1.3, 0.13 * a)
        mask = np.zeros(u.shape, dtype=bool)
        for sgn in (1.0, -1.0):
            c, s = math.cos(sgn * b), math.sin(sgn * b)
            p = c * u + s * v
            q = -s * u + c * v
            arm = (p >= -a) & (p <= 0.25 * a) & (np.abs(q) <= w)
            jaw = ((p - 0.58 * a) / (0.42 * a)) ** 2 + (q / (0.17 * a)) ** 2 <= 1.0
            mask |= arm | jaw
        return mask.astype(np.float32)
    if family == "cross-blades":
        b = 0.45
        w = max(1.0, 0.09 * a)
        mask = np.zeros(u.shape, dtype=bool)
        for sgn in (1.0, -1.0):
            c, s = math.cos(sgn * b), math.sin(sgn * b)
            p = c * u + s * v
            q = -s * u + c * v
            blade = (p >= -0.1 * a) & (p <= a) & (np.abs(q) <= w)
            dr2 = (p + 0.55 * a) ** 2 + q * q
            ring = (dr2 <= (0.30 * a) ** 2) & (dr2 >= (0.14 * a) ** 2)
            mask |= blade | ring
        return mask.astype(np.float32)
    raise DataError(f"unknown glyph family {family!r}")


def render_glyph(
    spec: GlyphSpec,
    rng: np.random.Generator,
    canvas_hw: tuple[int, int] = (96, 96),
    center: Optional[tuple[float, float]] = None,
    max_retries: int = 8,
) -> tuple[np.ndarray, BBox]:
    """Render one glyph onto an otherwise-zero canvas.

    Returns the HxWx3 sub-image (zero outside the glyph's support) and the
    tight half-open bbox of that support. Placement is resampled up to
    ``max_retries`` times if the glyph misses the canvas entirely.
    """
    h, w = canvas_hw
    size = float(rng.uniform(*spec.size_range))
    theta = float(rng.uniform(*spec.rotation_range))
    opacity = float(rng.uniform(*spec.opacity_range))
    jitter = rng.uniform(0.85, 1.15, size=3)
    color = np.clip(np.asarray(spec.base_color, dtype=np.float32) * jitter, 0.0, 1.0)

    ys, xs = np.mgrid[0:h, 0:w]
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    for attempt in range(max_retries):
        if center is not None:
            cx, cy = center
        else:
            cx = float(rng.uniform(0.12 * w, 0.88 * w))
            cy = float(rng.uniform(0.12 * h, 0.88 * h))
        dx = xs - cx
        dy = ys - cy
        u = cos_t * dx + sin_t * dy
        v = -sin_t * dx + cos_t * dy
        alpha = _family_alpha(spec.family, u, v, size)
        support = alpha > 0.0
        if support.any():
            sub = (alpha * opacity)[:, :, None] * color[None, None, :]
            rows = np.flatnonzero(support.any(axis=1))
            cols = np.flatnonzero(support.any(axis=0))
            bbox = BBox(
                int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1,
                spec.class_id,
            )
            return sub.astype(np.float32), bbox
        if center is not None:
            break
    raise DataError(
        f"glyph class {spec.class_id} ({spec.family}) missed the canvas "
        f"after {max_retries} placements"
    )


def compose(scene: Scene) -> np.ndarray:
    """Compose a scene into one image, clamped to [0, 1].

    Item contributions are accumulated in a canonical per-pixel order (sorted
    values), so the result is exactly invariant to item permutations.
    """
    bg = scene.background.astype(np.float32, copy=False)
    if not scene.items:
        return np.clip(bg, 0.0, 1.0)
    stack = np.stack([it.image.astype(np.float32, copy=False) for it in scene.items])
    if scene.mode == "additive":
        total = bg + np.sort(stack, axis=0).sum(axis=0)
        return np.clip(total, 0.0, 1.0)
    trans = (1.0 - bg) * np.sort(1.0 - stack, axis=0).prod(axis=0)
    return np.clip(1.0 - trans, 0.0, 1.0)


def default_glyph_library() -> list[GlyphSpec]:
    """Prohibited classes 0..4 plus clutter classes 5..11.

    Clutter deliberately shadows the prohibited palette and shapes (bars,
    rings, wedges in adjacent hues): only full glyph configurations separate
    positives from negatives, so abundant negatives carry real gradient
    signal rather than being trivially dismissible.
    """
    prohibited = [
        GlyphSpec(0, "angular-L", (0.16, 0.25, 0.78), size_range=(18.0, 34.0)),
        GlyphSpec(1, "blade", (0.24, 0.56, 0.82), size_range=(20.0, 38.0)),
        GlyphSpec(2, "open-wrench", (0.12, 0.66, 0.55), size_range=(20.0, 36.0)),
        GlyphSpec(3, "jaw-pair", (0.82, 0.46, 0.15), size_range=(20.0, 36.0)),
        GlyphSpec(4, "cross-blades", (0.72, 0.22, 0.62), size_range=(20.0, 36.0)),
    ]
    clutter_colors = [
        (0.20, 0.30, 0.72),  # square, near the angular-L blue
        (0.78, 0.50, 0.20),  # disc, near the jaw-pair orange
        (0.66, 0.26, 0.58),  # ring, near the cross-blades violet
        (0.28, 0.52, 0.78),  # rod, near the blade steel-blue
        (0.16, 0.60, 0.50),  # triangle, near the open-wrench teal
        (0.45, 0.42, 0.38),  # blob, neutral
        (0.70, 0.28, 0.55),  # plus, near the cross-blades violet
    ]
    clutter = [
        GlyphSpec(
            NUM_PROHIBITED + i,
            family,
            clutter_colors[i],
            size_range=(10.0, 30.0),
            opacity_range=(0.45, 0.9),
        )
        for i, family in enumerate(CLUTTER_FAMILIES)
    ]
    return prohibited + clutter


def _make_background(rng: np.random.Generator, canvas_hw: tuple[int, int]) -> np.ndarray:
    """Low-amplitude colored noise plus 0-3 large soft blobs."""
    h, w = canvas_hw
    base = rng.uniform(0.04, 0.10, size=3).astype(np.float32)
    bg = np.broadcast_to(base, (h, w, 3)).copy()
    bg += rng.normal(0.0, 0.015, size=(h, w, 3)).astype(np.float32)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(0, 4))):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        radius = rng.uniform(0.2, 0.5) * min(h, w)
        amp = rng.uniform(0.03, 0.10)
        tint = rng.dirichlet(np.ones(3)).astype(np.float32)
        bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * radius**2))
        bg += amp * bump[:, :, None].astype(np.float32) * tint[None, None, :] * 3.0
    return np.clip(bg, 0.0, 1.0).astype(np.float32)


def _scale_specs(specs: Sequence[GlyphSpec], canvas_hw: tuple[int, int]) -> list[GlyphSpec]:
    # Glyph size ranges are calibrated for a 96px canvas; scale proportionally.
    factor = min(canvas_hw) / 96.0
    if factor == 1.0:
        return list(specs)
    return [
        dataclasses.replace(
            s, size_range=(s.size_range[0] * factor, s.size_range[1] * factor)
        )
        for s in specs
    ]


def build_scene(
    rng: np.random.Generator,
    glyphs: Sequence[GlyphSpec],
    positive: bool,
    canvas_hw: tuple[int, int] = (96, 96),
    mode: str = "additive",
) -> Scene:
    """Sample one scene: 1-3 prohibited glyphs (positives only) plus 2-6 clutter."""
    prohibited = [g for g in glyphs if g.class_id < NUM_PROHIBITED]
    clutter = [g for g in glyphs if g.class_id >= NUM_PROHIBITED]
    if positive and not prohibited:
        raise DataError("glyph library has no prohibited classes")
    if not clutter:
        raise DataError("glyph library has no clutter classes")
    items: list[PlacedItem] = []
    if positive:
        for _ in range(int(rng.integers(1, 4))):
            spec = prohibited[int(rng.integers(0, len(prohibited)))]
            sub, bbox = render_glyph(spec, rng, canvas_hw)
            items.append(PlacedItem(spec.class_id, sub, bbox))
    for _ in range(int(rng.integers(2, 7))):
        spec = clutter[int(rng.integers(0, len(clutter)))]
        sub, bbox = render_glyph(spec, rng, canvas_hw)
        items.append(PlacedItem(spec.class_id, sub, bbox))
    return Scene(_make_background(rng, canvas_hw), items, mode=mode)


def scene_labels(scene: Scene) -> tuple[LabelVector, tuple[BBox, ...]]:
    """Ground truth of a scene: prohibited presence bits plus their boxes."""
    values = [0] * NUM_PROHIBITED
    bboxes = []
    for item in scene.items:
        if item.class_id < NUM_PROHIBITED:
            values[item.class_id] = 1
            bboxes.append(item.bbox)
    return LabelVector(tuple(values), NUM_PROHIBITED), tuple(bboxes)


def generate_dataset(
    n_pos: int,
    n_neg: int,
    out_dir: Path | str,
    glyphs: Optional[Sequence[GlyphSpec]] = None,
    seed: int = 0,
    mode: str = "additive",
    canvas_hw: tuple[int, int] = (96, 96),
    manifest_name: str = "manifest.jsonl",
) -> DatasetManifest:
    """Render ``n_pos`` positive and ``n_neg`` negative scenes to PNG files.

    Every sample derives its own generator from (seed, sample index), so
    output is reproducible and order-independent.
    """
    if n_pos < 0 or n_neg < 0:
        raise DataError("n_pos and n_neg must be >= 0")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    if glyphs is None:
        glyphs = default_glyph_library()
    glyphs = _scale_specs(glyphs, canvas_hw)

    entries: list[ManifestEntry] = []
    for idx in range(n_pos + n_neg):
        positive = idx < n_pos
        rng = np.random.default_rng([seed, idx])
        scene = build_scene(rng, glyphs, positive, canvas_hw, mode)
        image = compose(scene)
        labels, bboxes = scene_labels(scene)
        sample_id = f"{seed}-{idx:06d}"
        rel_path = f"images/{sample_id}.png"
        try:
            save_image(image, out_dir / rel_path)
        except OSError as e:
            raise DataError(f"sample {sample_id}: failed to write image ({e})") from e
        entries.append(ManifestEntry(sample_id, rel_path, labels, bboxes, "train"))

    manifest = DatasetManifest(entries, split_tag="train", seed=seed, root=out_dir)
    manifest.save(out_dir / manifest_name)
    return manifest


@dataclass(frozen=True)
class SubsetSpec:
    """Imbalanced subset request: exactly ``ratio`` negatives per positive."""

    ratio: int
    positive_count: int
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.ratio < 1:
            raise DataError(f"ratio must be >= 1, got {self.ratio}")
        if self.positive_count < 1:
            raise DataError(f"positive_count must be >= 1, got {self.positive_count}")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction {self.train_fraction} outside (0, 1)")


def subset_spec_for_ratio(
    pool: DatasetManifest,
    ratio: int,
    seed: int = 0,
    positive_cap: Optional[int] = None,
) -> SubsetSpec:
    """Largest subset the pool supports at this ratio.

    Uses all available positives unless ``positive_cap`` restricts them (the
    high-imbalance regime keeps the full negative pool while shrinking the
    positive set).
    """
    n_pos = len(pool.positives())
    n_neg = len(pool.negatives())
    count = min(n_pos, n_neg // ratio)
    if positive_cap is not None:
        count = min(count, positive_cap)
    if count < 1:
        raise DataError(
            f"pool ({n_pos} positives / {n_neg} negatives) cannot support ratio {ratio}"
        )
    return SubsetSpec(ratio=ratio, positive_count=count, seed=seed)


def build_subsets(
    pool: DatasetManifest, spec: SubsetSpec
) -> tuple[DatasetManifest, DatasetManifest]:
    """Sample an imbalanced subset and split it into train/test manifests.

    The subset has exactly ``positive_count`` positives and
    ``ratio * positive_count`` negatives, drawn without replacement; the
    split is stratified separately over positives and negatives.
    """
    positives = pool.positives()
    negatives = pool.negatives()
    n_neg_needed = spec.ratio * spec.positive_count
    if len(positives) < spec.positive_count:
        raise DataError(
            f"pool has {len(positives)} positives, subset needs {spec.positive_count}"
        )
    if len(negatives) < n_neg_needed:
        raise DataError(
            f"pool has {len(negatives)} negatives, subset needs {n_neg_needed} "
            f"(ratio {spec.ratio} x {spec.positive_count} positives)"
        )
    rng = np.random.default_rng(spec.seed)
    pos_pick = rng.choice(len(positives), size=spec.positive_count, replace=False)
    neg_pick = rng.choice(len(negatives), size=n_neg_needed, replace=False)

    def stratified(entries, picks):
        chosen = [entries[i] for i in picks]
        n_train = round(len(chosen) * spec.train_fraction)
        return chosen[:n_train], chosen[n_train:]

    train_pos, test_pos = stratified(positives, pos_pick)
    train_neg, test_neg = stratified(negatives, neg_pick)
    train = [dataclasses.replace(e, split="train") for e in train_pos + train_neg]
    test = [dataclasses.replace(e, split="test") for e in test_pos + test_neg]
    return (
        DatasetManifest(train, split_tag="train", seed=spec.seed, root=pool.root),
        DatasetManifest(test, split_tag="test", seed=spec.seed, root=pool.root),
    )
