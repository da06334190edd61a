"""Ablation harness: train variant x ratio x seed grids and tabulate results.

Each ratio gets one imbalanced subset (shared by every variant and seed, so
comparisons see identical data); each run trains from scratch and is
evaluated on the subset's test split. Failed cells are recorded and the grid
proceeds.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DatasetManifest
from .errors import ChrnetError
from .evalkit import evaluate, write_report
from .synth import SubsetSpec, build_subsets, subset_spec_for_ratio
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationRun:
    variant: str
    ratio: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.variant}_r{self.ratio}_s{self.seed}"


@dataclass
class AblationResult:
    variant: str
    ratio: int
    seed: int
    status: str  # "ok" | "failed"
    map: Optional[float] = None
    mean_pointing: Optional[float] = None
    error: Optional[str] = None
    seconds: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def plan_runs(
    variants: Sequence[str], ratios: Sequence[int], seeds: Sequence[int]
) -> list[AblationRun]:
    return [
        AblationRun(variant=v, ratio=r, seed=s)
        for r in ratios
        for v in variants
        for s in seeds
    ]


def build_ratio_subsets(
    pool: DatasetManifest,
    ratios: Sequence[int],
    positive_count: Optional[int] = None,
    subset_seed: int = 0,
    positive_cap_by_ratio: Optional[dict[int, int]] = None,
) -> dict[int, tuple[DatasetManifest, DatasetManifest]]:
    """One (train, test) subset pair per ratio, shared across all runs."""
    subsets = {}
    for ratio in ratios:
        if positive_count is not None:
            spec = SubsetSpec(ratio=ratio, positive_count=positive_count, seed=subset_seed)
        else:
            cap = (positive_cap_by_ratio or {}).get(ratio)
            spec = subset_spec_for_ratio(pool, ratio, seed=subset_seed, positive_cap=cap)
        subsets[ratio] = build_subsets(pool, spec)
    return subsets


def run_grid(
    out_dir: Path | str,
    subsets: dict[int, tuple[DatasetManifest, DatasetManifest]],
    base_config: TrainConfig,
    variants: Sequence[str],
    seeds: Sequence[int],
) -> list[AblationResult]:
    """Execute the grid, writing per-run artifacts and a results table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = plan_runs(variants, sorted(subsets), seeds)
    results: list[AblationResult] = []
    rows_path = out_dir / "results.jsonl"
    rows_path.write_text("")
    for run in runs:
        train_manifest, test_manifest = subsets[run.ratio]
        config = dataclasses.replace(base_config, variant=run.variant, seed=run.seed)
        run_dir = out_dir / run.name
        t0 = time.perf_counter()
        try:
            ckpt = train(config, train_manifest, None, out_dir=run_dir)
            report = evaluate(ckpt, test_manifest, batch_size=config.batch_size)
            write_report(report, run_dir / "report.json")
            result = AblationResult(
                run.variant, run.ratio, run.seed, "ok",
                map=report["map"],
                mean_pointing=report["mean_pointing_accuracy"],
                seconds=time.perf_counter() - t0,
            )
            logger.info(
                "run %s: mAP %.4f pointing %s (%.0fs)",
                run.name, result.map,
                "n/a" if result.mean_pointing is None else f"{result.mean_pointing:.4f}",
                result.seconds,
            )
        except (ChrnetError, RuntimeError, OSError) as e:
            result = AblationResult(
                run.variant, run.ratio, run.seed, "failed", error=f"{type(e).__name__}: {e}"
            )
            logger.error("run %s failed: %s", run.name, result.error)
        results.append(result)
        with open(rows_path, "a", encoding="utf-8") as f:
            f.write(result.to_json() + "\n")
    table = summarize(results, variants, sorted(subsets), seeds)
    (out_dir / "table.json").write_text(json.dumps(table, sort_keys=True, indent=2) + "\n")
    (out_dir / "table.md").write_text(format_table(table, variants, sorted(subsets)))
    return results


def summarize(
    results: Sequence[AblationResult],
    variants: Sequence[str],
    ratios: Sequence[int],
    seeds: Sequence[int],
) -> dict:
    table: dict = {"variants": list(variants), "ratios": list(ratios), "seeds": list(seeds), "cells": {}}
    for v in variants:
        for r in ratios:
            cell = [x for x in results if x.variant == v and x.ratio == r]
            ok = [x for x in cell if x.status == "ok"]
            key = f"{v}@{r}"
            if not ok:
                table["cells"][key] = {"status": "failed", "errors": [x.error for x in cell]}
                continue
            maps = [x.map for x in ok]
            points = [x.mean_pointing for x in ok if x.mean_pointing is not None]
            table["cells"][key] = {
                "status": "ok",
                "map_mean": float(np.mean(maps)),
                "map_std": float(np.std(maps)),
                "map_values": maps,
                "pointing_mean": float(np.mean(points)) if points else None,
                "pointing_std": float(np.std(points)) if points else None,
                "pointing_values": points,
                "num_failed": len(cell) - len(ok),
            }
    return table


def format_table(table: dict, variants: Sequence[str], ratios: Sequence[int]) -> str:
    """Markdown table: rows = variant, columns = (mAP, pointing) per ratio."""
    header = ["variant"]
    for r in ratios:
        header += [f"mAP@{r}", f"point@{r}"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for v in variants:
        row = [v]
        for r in ratios:
            cell = table["cells"].get(f"{v}@{r}", {})
            if cell.get("status") != "ok":
                row += ["FAILED", "FAILED"]
                continue
            row.append(f"{cell['map_mean']:.4f}±{cell['map_std']:.4f}")
            if cell["pointing_mean"] is None:
                row.append("n/a")
            else:
                row.append(f"{cell['pointing_mean']:.4f}±{cell['pointing_std']:.4f}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
