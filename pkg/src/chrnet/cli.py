"""Command-line entry point: generate, ingest, train, evaluate, ablate, report.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import ablation, reporting, synth
from .data import load_manifest
from .errors import ChrnetError, ConfigError, DataError, NumericalError
from .evalkit import evaluate, write_report
from .head import VARIANTS
from .ingest import IngestConfig, ingest
from .trainer import TrainConfig, parse_train_config, restore_model, train

logger = logging.getLogger(__name__)


def _canvas(value: str) -> tuple[int, int]:
    parts = value.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    return int(parts[0]), int(parts[1])


def _load_config(args, **overrides) -> TrainConfig:
    clean = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        return parse_train_config(args.config, clean)
    base = TrainConfig()
    backbone = base.backbone
    head = base.head
    if "backbone.input_hw" in clean:
        backbone = dataclasses.replace(backbone, input_hw=clean.pop("backbone.input_hw"))
    return dataclasses.replace(base, backbone=backbone, head=head, **clean)


def cmd_generate(args) -> int:
    out_dir = Path(args.out_dir)
    manifest_path = out_dir / "manifest.jsonl"
    if manifest_path.exists():
        raise ConfigError(
            f"{manifest_path} already exists; refusing to overwrite "
            "(use a fresh --out-dir)"
        )
    n_neg = args.n_neg
    if n_neg is None:
        if args.ratio is None:
            raise ConfigError("provide --n-neg or --ratio")
        n_neg = args.ratio * args.n_pos
    pool = synth.generate_dataset(
        args.n_pos, n_neg, out_dir, seed=args.seed, mode=args.mode,
        canvas_hw=args.canvas,
    )
    logger.info("wrote %d samples to %s", len(pool), out_dir)
    if args.ratio is not None:
        spec = synth.SubsetSpec(args.ratio, args.n_pos, seed=args.seed)
        train_m, test_m = synth.build_subsets(pool, spec)
        train_m.save(out_dir / f"train_r{args.ratio}.jsonl")
        test_m.save(out_dir / f"test_r{args.ratio}.jsonl")
        logger.info(
            "subsets at ratio %d: %d train / %d test", args.ratio, len(train_m), len(test_m)
        )
    return 0


def cmd_ingest(args) -> int:
    config = IngestConfig(
        image_dir=args.images,
        label_csv=args.labels,
        bbox_csv=args.bboxes,
        split_tag=args.split,
    )
    manifest = ingest(config)
    out = Path(args.out)
    manifest.save(out)
    logger.info("ingested %d samples into %s", len(manifest), out)
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _load_config(
        args,
        variant=args.variant,
        epochs=args.epochs,
        **({"learning_rate": args.learning_rate} if args.learning_rate else {}),
    )
    train_manifest = load_manifest(args.train_manifest, prohibited_count=5)
    val_manifest = (
        load_manifest(args.val_manifest, prohibited_count=5) if args.val_manifest else None
    )
    seeds = args.seed if args.seed else [base.seed]
    for seed in seeds:
        config = dataclasses.replace(base, seed=seed)
        ckpt = out_dir / f"checkpoint_seed{seed}.npz"
        if ckpt.exists() and not args.resume:
            raise ConfigError(
                f"{ckpt} already exists; pass --resume to continue or use a fresh --out-dir"
            )
        path = train(config, train_manifest, val_manifest, out_dir, resume=args.resume)
        logger.info("seed %d done, checkpoint at %s", seed, path)
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate(args.checkpoint, Path(args.manifest), batch_size=args.batch_size)
    out = Path(args.out)
    write_report(report, out)
    map_str = "n/a" if report["map"] is None else f"{report['map']:.4f}"
    logger.info("report written to %s (mAP %s)", out, map_str)
    return 0


def cmd_ablate(args) -> int:
    out_dir = Path(args.out_dir)
    base = _load_config(args, epochs=args.epochs)
    if args.pool:
        pool = load_manifest(args.pool, prohibited_count=5)
    else:
        if args.n_pos is None:
            raise ConfigError("provide --pool or --n-pos to generate one")
        pool_dir = out_dir / "pool"
        if (pool_dir / "manifest.jsonl").exists():
            pool = load_manifest(pool_dir / "manifest.jsonl", prohibited_count=5)
            logger.info("reusing existing pool (%d samples)", len(pool))
        else:
            n_neg = max(args.ratios) * args.n_pos
            logger.info("generating pool: %d positives, %d negatives", args.n_pos, n_neg)
            pool = synth.generate_dataset(
                args.n_pos, n_neg, pool_dir, seed=args.pool_seed, canvas_hw=args.canvas
            )
    subsets = ablation.build_ratio_subsets(
        pool, args.ratios, positive_count=args.subset_positives, subset_seed=args.pool_seed
    )
    runs = ablation.plan_runs(args.variants, args.ratios, args.seeds)
    if args.dry_run:
        for ratio, (tr, te) in sorted(subsets.items()):
            print(f"subset ratio={ratio}: {len(tr)} train / {len(te)} test")
        for run in runs:
            print(f"would run variant={run.variant} ratio={run.ratio} seed={run.seed}")
        print(f"total: {len(runs)} training runs")
        return 0
    results = ablation.run_grid(out_dir, subsets, base, args.variants, args.seeds)
    print((out_dir / "table.md").read_text())
    failed = [r for r in results if r.status != "ok"]
    if failed:
        logger.warning("%d of %d runs failed", len(failed), len(results))
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.checkpoint and args.manifest:
        from .dataio import ManifestDataset

        model, _, _ = restore_model(args.checkpoint)
        manifest = load_manifest(args.manifest, prohibited_count=5)
        reporting.plot_pr_curves(
            model, ManifestDataset(manifest, cache=False), out_dir / "pr_curves.png"
        )
        reporting.save_cam_overlays(model, manifest, out_dir / "cams", limit=args.cam_limit)
        logger.info("wrote PR curves and CAM overlays to %s", out_dir)
    if args.table:
        reporting.plot_gain_vs_ratio(args.table, out_dir / "gain_vs_ratio.png")
        logger.info("wrote gain-vs-ratio plot")
    if not (args.checkpoint and args.manifest) and not args.table:
        raise ConfigError("provide --checkpoint with --manifest, and/or --table")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chrnet",
        description="Hierarchically refined multi-label recognition on "
        "overlapping imagery: data synthesis, training, evaluation, ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, default=None)
    p.add_argument("--ratio", type=int, default=None,
                   help="negatives per positive; also emits train/test subsets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", type=_canvas, default=(96, 96), metavar="HxW")
    p.add_argument("--mode", choices=("additive", "attenuation"), default="additive")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="convert CSV-labeled images to a manifest")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--labels", required=True, help="label CSV (sample_id + class columns)")
    p.add_argument("--bboxes", default=None, help="optional bbox CSV")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one or more seeds")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--seed", type=int, nargs="*", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write a metrics report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=128)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train a variant x ratio x seed grid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pool", default=None, help="existing pool manifest")
    p.add_argument("--n-pos", type=int, default=None, help="pool positives to generate")
    p.add_argument("--pool-seed", type=int, default=0)
    p.add_argument("--canvas", type=_canvas, default=(96, 96), metavar="HxW")
    p.add_argument("--ratios", type=int, nargs="+", default=[10, 100])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--subset-positives", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="emit plots (PR curves, gain, CAM overlays)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--table", default=None, help="ablation table.json for the gain plot")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cam-limit", type=int, default=8)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except ChrnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
