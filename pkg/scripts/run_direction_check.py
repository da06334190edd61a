#!/usr/bin/env python3
"""Desk-scale direction experiment: gated refinement vs plain baseline.

Generates one synthetic pool, carves ratio-10 and ratio-100 subsets out of
it, trains baseline and CHR at three seeds each, and reports whether the
CHR-minus-baseline mAP gap grows with imbalance.

Usage:
    python scripts/run_direction_check.py --out-dir runs/direction \
        --n-pos 500 --ratios 10 100 --seeds 0 1 2 --epochs 3
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from chrnet.ablation import build_ratio_subsets, run_grid
from chrnet.data import load_manifest
from chrnet.reporting import plot_gain_vs_ratio
from chrnet.synth import generate_dataset
from chrnet.trainer import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
logger = logging.getLogger("direction_check")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, required=True)
    parser.add_argument("--n-pos", type=int, default=500)
    parser.add_argument("--ratios", type=int, nargs="+", default=[10, 100])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--learning-rate", type=float, default=0.02)
    parser.add_argument("--pool-seed", type=int, default=7)
    args = parser.parse_args()

    pool_dir = args.out_dir / "pool"
    if (pool_dir / "manifest.jsonl").exists():
        pool = load_manifest(pool_dir / "manifest.jsonl", prohibited_count=5)
        logger.info("reusing pool with %d samples", len(pool))
    else:
        n_neg = max(args.ratios) * args.n_pos
        logger.info("generating pool: %d positives + %d negatives", args.n_pos, n_neg)
        pool = generate_dataset(args.n_pos, n_neg, pool_dir, seed=args.pool_seed)

    subsets = build_ratio_subsets(pool, args.ratios, positive_count=args.n_pos)
    base = TrainConfig(
        epochs=args.epochs, learning_rate=args.learning_rate, eval_interval=0
    )
    results = run_grid(args.out_dir, subsets, base, ["baseline", "CHR"], args.seeds)

    print()
    verdict_ok = True
    gaps = {}
    for ratio in sorted(args.ratios):
        chr_maps = [r.map for r in results if r.variant == "CHR" and r.ratio == ratio and r.status == "ok"]
        base_maps = [r.map for r in results if r.variant == "baseline" and r.ratio == ratio and r.status == "ok"]
        wins = sum(a > b for a, b in zip(chr_maps, base_maps))
        gaps[ratio] = float(np.mean(chr_maps) - np.mean(base_maps))
        print(
            f"ratio {ratio:>4}: CHR {np.mean(chr_maps):.4f} vs baseline "
            f"{np.mean(base_maps):.4f}  (gap {gaps[ratio]:+.4f}, CHR wins {wins}/{len(chr_maps)} seeds)"
        )
    ordered = sorted(args.ratios)
    if len(ordered) >= 2 and gaps[ordered[-1]] < gaps[ordered[0]]:
        verdict_ok = False
    print(f"gap grows with imbalance: {'yes' if verdict_ok else 'NO'}")
    plot_gain_vs_ratio(args.out_dir / "table.json", args.out_dir / "gain_vs_ratio.png")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
