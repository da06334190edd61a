"""Metrics and localization: per-class average precision, mean AP, and
CAM-based pointing localization with cross-level max.

AP is the all-point area under the precision envelope of the score-ranked
test set, with ties broken by stable sample_id order. A pointing hit is
counted when the globally maximal response over all bilinearly upscaled
per-level heatmaps lands inside a ground-truth box of the queried class;
exact ties resolve to the first (level, row, column) in lexicographic order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import BBox, CLASS_NAMES, DatasetManifest, Sample, load_manifest
from .dataio import ManifestDataset
from .errors import DataError
from .model import RecognitionModel
from .trainer import restore_model

logger = logging.getLogger(__name__)


def average_precision(
    scores: Sequence[float],
    labels: Sequence[int],
    sample_ids: Optional[Sequence[str]] = None,
) -> float:
    """All-point average precision of one class ranking."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be 1-d and the same length")
    num_pos = int(labels.sum())
    if num_pos == 0:
        raise DataError("average precision undefined: no positive labels")
    keys = list(sample_ids) if sample_ids is not None else list(range(len(scores)))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], keys[i]))
    ranked = labels[order]
    precision = np.cumsum(ranked) / np.arange(1, len(ranked) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[ranked > 0].sum() / num_pos)


def ranked_mean_ap(
    score_matrix: np.ndarray,
    label_matrix: np.ndarray,
    sample_ids: Optional[Sequence[str]] = None,
) -> float:
    """Unweighted mean AP over the classes that have at least one positive."""
    aps = []
    for c in range(score_matrix.shape[1]):
        if label_matrix[:, c].sum() == 0:
            logger.warning("class %d has no positives; excluded from mAP", c)
            continue
        aps.append(average_precision(score_matrix[:, c], label_matrix[:, c], sample_ids))
    if not aps:
        logger.warning("no class has positives; mAP reported as 0")
        return 0.0
    return float(np.mean(aps))


def bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel-aligned centers, edges clamped."""
    h, w = img.shape
    out_h, out_w = out_hw
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yf = np.floor(ys)
    xf = np.floor(xs)
    wy = (ys - yf)[:, None]
    wx = (xs - xf)[None, :]
    y0 = np.clip(yf.astype(np.int64), 0, h - 1)
    y1 = np.clip(yf.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(xf.astype(np.int64), 0, w - 1)
    x1 = np.clip(xf.astype(np.int64) + 1, 0, w - 1)
    img = img.astype(np.float64)
    return (
        (1 - wy) * (1 - wx) * img[np.ix_(y0, x0)]
        + (1 - wy) * wx * img[np.ix_(y0, x1)]
        + wy * (1 - wx) * img[np.ix_(y1, x0)]
        + wy * wx * img[np.ix_(y1, x1)]
    )


@dataclass(frozen=True)
class PointingDecision:
    hit: bool
    level: int  # 0-based index into the CAM list (finest first)
    row: int
    col: int


def locate_peak(
    cams: Sequence[np.ndarray], image_hw: tuple[int, int]
) -> tuple[int, int, int]:
    """Global argmax over all upscaled per-level heatmaps.

    Returns (level, row, col); exact ties resolve to the lexicographically
    first triple.
    """
    stacked = np.stack([bilinear_resize(np.asarray(c), image_hw) for c in cams])
    flat = int(np.argmax(stacked))
    level, row, col = np.unravel_index(flat, stacked.shape)
    return int(level), int(row), int(col)


def pointing_hit(
    cams: Sequence[np.ndarray],
    boxes: Sequence[BBox],
    image_hw: tuple[int, int],
) -> PointingDecision:
    level, row, col = locate_peak(cams, image_hw)
    hit = any(b.contains(col, row) for b in boxes)
    return PointingDecision(hit=hit, level=level, row=row, col=col)


def pointing_localize(
    sample: Sample, cams: Sequence[np.ndarray], class_id: int
) -> PointingDecision:
    """Hit/miss decision for one class of one sample."""
    boxes = [b for b in sample.bboxes if b.class_id == class_id]
    if not boxes:
        raise DataError(
            f"sample {sample.sample_id} has no bbox of class {class_id}; "
            "pointing is evaluated on class-positive images only"
        )
    return pointing_hit(cams, boxes, sample.image.shape[:2])


def collect_scores(
    model: RecognitionModel, dataset: ManifestDataset, batch_size: int = 128
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Fused and per-level scores over a dataset, in manifest order."""
    model.eval()
    fused, per_level = [], None
    with torch.no_grad():
        for images, _, _ in dataset.iter_batches(batch_size):
            out = model(images)
            fused.append(out.fused.numpy())
            if per_level is None:
                per_level = [[] for _ in out.per_level]
            for acc, p in zip(per_level, out.per_level):
                acc.append(p.numpy())
    num_classes = model.head.config.num_classes
    if not fused:
        return np.zeros((0, num_classes)), []
    return np.concatenate(fused), [np.concatenate(p) for p in per_level]


def evaluate(
    checkpoint: Path | str | RecognitionModel,
    manifest: DatasetManifest | Path | str,
    batch_size: int = 128,
) -> dict:
    """Full test-set report: per-class AP, mAP, pointing accuracy, per-level APs.

    The report is a pure function of (checkpoint, manifest): identical inputs
    produce byte-identical JSON. Timing is logged, never written to the report.
    """
    if isinstance(checkpoint, RecognitionModel):
        model, epoch = checkpoint, None
    else:
        model, _, meta = restore_model(checkpoint)
        epoch = int(meta["epoch"])
    num_classes = model.head.config.num_classes
    if num_classes != len(CLASS_NAMES):
        raise DataError(
            f"checkpoint classifies {num_classes} classes, expected {len(CLASS_NAMES)}"
        )
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest, prohibited_count=num_classes)
    dataset = ManifestDataset(manifest)
    if dataset.labels.shape[1] != num_classes:
        raise DataError(
            f"manifest labels have {dataset.labels.shape[1]} observed classes, "
            f"checkpoint expects {num_classes}"
        )

    t0 = time.perf_counter()
    fused, per_level = collect_scores(model, dataset, batch_size)
    if len(dataset):
        logger.info(
            "inference: %.2f ms/image over %d images",
            1000.0 * (time.perf_counter() - t0) / len(dataset),
            len(dataset),
        )

    labels = dataset.labels
    ids = dataset.sample_ids
    per_class_ap: dict[str, Optional[float]] = {}
    for c, name in enumerate(CLASS_NAMES):
        if labels[:, c].sum() == 0:
            logger.warning("class %s has no positives; AP undefined", name)
            per_class_ap[name] = None
        else:
            per_class_ap[name] = average_precision(fused[:, c], labels[:, c], ids)

    level_reports = []
    for level_scores in per_level:
        ap = {
            name: (
                average_precision(level_scores[:, c], labels[:, c], ids)
                if labels[:, c].sum() > 0
                else None
            )
            for c, name in enumerate(CLASS_NAMES)
        }
        defined = [v for v in ap.values() if v is not None]
        level_reports.append(
            {"ap": ap, "map": float(np.mean(defined)) if defined else None}
        )

    pointing = _pointing_section(model, dataset, batch_size)

    defined_aps = [v for v in per_class_ap.values() if v is not None]
    defined_pt = [
        pointing[name]["accuracy"]
        for name in CLASS_NAMES
        if pointing[name]["accuracy"] is not None
    ]
    classes = {
        name: {
            "ap": per_class_ap[name],
            "pointing_accuracy": pointing[name]["accuracy"],
            "pointing_hits": pointing[name]["hits"],
            "pointing_misses": pointing[name]["misses"],
            "pointing_excluded": pointing[name]["excluded"],
            "num_positives": int(labels[:, i].sum()),
        }
        for i, name in enumerate(CLASS_NAMES)
    }
    return {
        "classes": classes,
        "map": float(np.mean(defined_aps)) if defined_aps else None,
        "mean_pointing_accuracy": float(np.mean(defined_pt)) if defined_pt else None,
        "per_level": level_reports,
        "num_samples": len(dataset),
        "variant": model.variant,
        "checkpoint_epoch": epoch,
    }


def _pointing_section(
    model: RecognitionModel, dataset: ManifestDataset, batch_size: int
) -> dict[str, dict]:
    """Hits/misses per class over class-positive samples carrying boxes."""
    counts = {
        name: {"hits": 0, "misses": 0, "excluded": 0} for name in CLASS_NAMES
    }
    positive_idx = [i for i in range(len(dataset)) if dataset.labels[i].max() > 0]
    h, w = model.backbone.config.input_hw
    model.eval()
    with torch.no_grad():
        for start in range(0, len(positive_idx), batch_size):
            chunk = positive_idx[start : start + batch_size]
            images, _, _ = dataset.batch(chunk)
            out = model(images)
            cams = model.head.cams(out.features)  # per level: [B, C', H_l, W_l]
            for j, idx in enumerate(chunk):
                entry = dataset.entries[idx]
                for c, name in enumerate(CLASS_NAMES):
                    if dataset.labels[idx, c] != 1:
                        continue
                    boxes = [b for b in entry.bboxes if b.class_id == c]
                    if not boxes:
                        counts[name]["excluded"] += 1
                        continue
                    sample_cams = [level[j, c].numpy() for level in cams]
                    decision = pointing_hit(sample_cams, boxes, (h, w))
                    counts[name]["hits" if decision.hit else "misses"] += 1
    report = {}
    for name, c in counts.items():
        evaluated = c["hits"] + c["misses"]
        report[name] = {
            "hits": c["hits"],
            "misses": c["misses"],
            "excluded": c["excluded"],
            "accuracy": c["hits"] / evaluated if evaluated else None,
        }
    return report


def write_report(report: dict, path: Path | str) -> Path:
    """Serialize a report deterministically (sorted keys, fixed layout)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
