"""Plot emission: PR curves, mAP-gain-vs-ratio, and CAM overlays."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import CLASS_NAMES, DatasetManifest
from .dataio import ManifestDataset
from .evalkit import bilinear_resize, collect_scores
from .model import RecognitionModel

logger = logging.getLogger(__name__)


def precision_recall_points(scores, labels, ids) -> tuple[np.ndarray, np.ndarray]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    ranked = np.asarray(labels)[order]
    tp = np.cumsum(ranked)
    precision = tp / np.arange(1, len(ranked) + 1)
    recall = tp / max(ranked.sum(), 1)
    return recall, precision


def plot_pr_curves(
    model: RecognitionModel, dataset: ManifestDataset, out_path: Path | str
) -> Path:
    fused, _ = collect_scores(model, dataset)
    fig, ax = plt.subplots(figsize=(6, 5))
    for c, name in enumerate(CLASS_NAMES):
        if dataset.labels[:, c].sum() == 0:
            continue
        recall, precision = precision_recall_points(
            fused[:, c], dataset.labels[:, c], dataset.sample_ids
        )
        ax.plot(recall, precision, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title("per-class precision/recall")
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_gain_vs_ratio(
    table_path: Path | str,
    out_path: Path | str,
    variant: str = "CHR",
    baseline: str = "baseline",
) -> Path:
    """mAP gain of one variant over the baseline as imbalance grows."""
    table = json.loads(Path(table_path).read_text())
    ratios = sorted(table["ratios"])
    gains = []
    for r in ratios:
        a = table["cells"].get(f"{variant}@{r}", {})
        b = table["cells"].get(f"{baseline}@{r}", {})
        if a.get("status") == "ok" and b.get("status") == "ok":
            gains.append(a["map_mean"] - b["map_mean"])
        else:
            gains.append(np.nan)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ratios, gains, marker="o")
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("negative/positive ratio")
    ax.set_ylabel(f"mAP({variant}) - mAP({baseline})")
    ax.set_title("accuracy gain vs class imbalance")
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path


def save_cam_overlays(
    model: RecognitionModel,
    manifest: DatasetManifest,
    out_dir: Path | str,
    limit: int = 8,
) -> list[Path]:
    """Overlay each positive sample's strongest-class heatmap on the image."""
    import torch

    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = ManifestDataset(manifest, cache=False)
    positive_idx = [i for i in range(len(dataset)) if dataset.labels[i].max() > 0][:limit]
    if not positive_idx:
        logger.warning("no positive samples to overlay")
        return []
    paths = []
    model.eval()
    with torch.no_grad():
        images, _, ids = dataset.batch(positive_idx)
        out = model(images)
        cams = model.head.cams(out.features)
        h, w = model.backbone.config.input_hw
        for j, idx in enumerate(positive_idx):
            c = int(dataset.labels[idx].argmax())
            heat = np.stack(
                [bilinear_resize(level[j, c].numpy(), (h, w)) for level in cams]
            ).max(axis=0)
            heat = heat - heat.min()
            if heat.max() > 0:
                heat /= heat.max()
            rgb = dataset.image(idx)
            overlay = np.clip(
                0.55 * rgb + 0.45 * np.stack([heat, np.zeros_like(heat), 1 - heat], axis=-1),
                0, 1,
            )
            path = out_dir / f"cam_{ids[j]}_{CLASS_NAMES[c]}.png"
            Image.fromarray((overlay * 255).astype(np.uint8)).save(path)
            paths.append(path)
    return paths
