"""Mini-batch training loop with deterministic checkpoint/resume.

Determinism contract: model init derives from the config seed, each epoch's
sample order is a pure function of (seed, epoch), and the learning rate is a
pure function of (epoch, total epochs), so restoring parameters, batchnorm
statistics, and optimizer slots from a checkpoint continues training
bit-identically to an uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .backbone import BackboneConfig
from .data import DatasetManifest
from .dataio import ManifestDataset
from .errors import ConfigError, DataError, NumericalError
from .head import HeadConfig, VARIANT_WIRING, VARIANTS
from .loss import training_loss
from .model import RecognitionModel, load_state_arrays, state_arrays

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "CHR"
    epochs: int = 2
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    optimizer: str = "sgd-momentum"  # "sgd-momentum" | "adaptive"
    seed: int = 0
    epsilon: float = 0.3
    eval_interval: int = 1
    balanced_sampler: bool = False
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in ("sgd-momentum", "adaptive"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon {self.epsilon} outside (0, 1)")
        if self.eval_interval < 0:
            raise ConfigError("eval_interval must be >= 0 (0 disables)")

    @property
    def loss_kind(self) -> str:
        return VARIANT_WIRING[self.variant][2]

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        obj = dict(obj)
        backbone = obj.pop("backbone", {})
        head = obj.pop("head", {})
        backbone = BackboneConfig(
            stem_channels=int(backbone.get("stem_channels", 12)),
            channels=tuple(backbone.get("channels", (24, 32, 48, 64))),
            blocks_per_stage=int(backbone.get("blocks_per_stage", 2)),
            taps=tuple(backbone.get("taps", (1, 2, 3))),
            input_hw=tuple(backbone.get("input_hw", (96, 96))),
        )
        head = HeadConfig(
            width=int(head.get("width", 128)),
            num_classes=int(head.get("num_classes", 5)),
            norm=str(head.get("norm", "batch")),
            prior=float(head.get("prior", 0.01)),
        )
        return TrainConfig(backbone=backbone, head=head, **obj)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# config-file key -> (TrainConfig path, parser)
_INT = int
_FLOAT = float
_STR = str


def _int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace("x", ",").split(",") if v != "")


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_CONFIG_KEYS = {
    "variant": ("variant", _STR),
    "epochs": ("epochs", _INT),
    "batch_size": ("batch_size", _INT),
    "learning_rate": ("learning_rate", _FLOAT),
    "momentum": ("momentum", _FLOAT),
    "optimizer": ("optimizer", _STR),
    "seed": ("seed", _INT),
    "eval_interval": ("eval_interval", _INT),
    "balanced_sampler": ("balanced_sampler", _bool),
    "loss.epsilon": ("epsilon", _FLOAT),
    "loss.kind": (None, _STR),  # validated against the variant below
    "backbone.stem_channels": ("backbone.stem_channels", _INT),
    "backbone.channels": ("backbone.channels", _int_tuple),
    "backbone.blocks_per_stage": ("backbone.blocks_per_stage", _INT),
    "backbone.taps": ("backbone.taps", _int_tuple),
    "backbone.input_hw": ("backbone.input_hw", _int_tuple),
    "head.width": ("head.width", _INT),
    "head.norm": ("head.norm", _STR),
    "head.prior": ("head.prior", _FLOAT),
}


def parse_train_config(path: Path | str, overrides: Optional[dict] = None) -> TrainConfig:
    """Read a flat key=value config file; ``#`` starts a comment line."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    loss_kind: Optional[str] = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        target, parser = _CONFIG_KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key} ({e})") from e
        if target is None:
            loss_kind = parsed  # type: ignore[assignment]
        else:
            values[target] = parsed
    if overrides:
        values.update(overrides)
    return _config_from_flat(values, loss_kind)


def _config_from_flat(values: dict, loss_kind: Optional[str]) -> TrainConfig:
    backbone_kw = {}
    head_kw = {}
    top_kw = {}
    for key, val in values.items():
        if key.startswith("backbone."):
            backbone_kw[key.split(".", 1)[1]] = val
        elif key.startswith("head."):
            head_kw[key.split(".", 1)[1]] = val
        else:
            top_kw[key] = val
    config = TrainConfig(
        backbone=BackboneConfig(**{**asdict(BackboneConfig()), **backbone_kw}),
        head=HeadConfig(**{**asdict(HeadConfig()), **head_kw}),
        **top_kw,
    )
    if loss_kind is not None and loss_kind != config.loss_kind:
        raise ConfigError(
            f"loss.kind={loss_kind!r} contradicts variant {config.variant} "
            f"(which implies {config.loss_kind!r})"
        )
    return config


def cosine_lr(base: float, epoch: int, total: int) -> float:
    if total <= 1:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


def build_model(config: TrainConfig) -> RecognitionModel:
    torch.manual_seed(config.seed)
    return RecognitionModel(config.variant, config.backbone, config.head)


def build_optimizer(config: TrainConfig, model: RecognitionModel) -> torch.optim.Optimizer:
    if config.optimizer == "sgd-momentum":
        return torch.optim.SGD(
            model.parameters(), lr=config.learning_rate, momentum=config.momentum
        )
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate)


def save_checkpoint(
    path: Path | str,
    model: RecognitionModel,
    optimizer: Optional[torch.optim.Optimizer],
    config: TrainConfig,
    epoch: int,
) -> Path:
    """Write a flat-array checkpoint (params, buffers, optimizer slots, meta)."""
    path = Path(path)
    arrays = {f"param/{k}": v for k, v in state_arrays(model).items()}
    if optimizer is not None:
        for name, param in model.named_parameters():
            for key, val in optimizer.state.get(param, {}).items():
                arr = (
                    val.detach().cpu().numpy()
                    if isinstance(val, torch.Tensor)
                    else np.asarray(val)
                )
                arrays[f"optim/{key}/{name.replace('.', '/')}"] = arr
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "epoch": epoch,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
    }
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def read_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(arrays.pop("meta_json").tobytes().decode("utf-8"))
    if meta.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {meta.get('schema')}")
    config = TrainConfig.from_dict(meta["config"])
    if config.config_hash() != meta["config_hash"]:
        raise ConfigError(f"{path}: config hash mismatch (corrupt or edited checkpoint)")
    return arrays, meta


def restore_model(path: Path | str) -> tuple[RecognitionModel, TrainConfig, dict]:
    arrays, meta = read_checkpoint(path)
    config = TrainConfig.from_dict(meta["config"])
    model = RecognitionModel(config.variant, config.backbone, config.head)
    load_state_arrays(
        model, {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    )
    return model, config, meta


def _restore_optimizer(
    arrays: dict[str, np.ndarray],
    model: RecognitionModel,
    optimizer: torch.optim.Optimizer,
) -> None:
    for name, param in model.named_parameters():
        prefix_path = name.replace(".", "/")
        slots = {}
        for key in list(arrays):
            head, _, rest = key.partition("/")
            if head != "optim":
                continue
            slot, _, ppath = rest.partition("/")
            if ppath == prefix_path:
                slots[slot] = torch.from_numpy(arrays[key].copy())
        if slots:
            optimizer.state[param] = slots


class _MetricsLog:
    """JSON-lines metrics writer: {"epoch", "split", "metric", "value"}."""

    def __init__(self, path: Path, append: bool):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not append:
            self.path.write_text("")

    def write(self, epoch: int, split: str, metric: str, value: float) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(
                json.dumps(
                    {"epoch": epoch, "split": split, "metric": metric, "value": value}
                )
            )
            f.write("\n")


def _score_stats(per_level: list[torch.Tensor]) -> list[dict]:
    return [
        {
            "level": i + 1,
            "min": float(p.detach().min()),
            "mean": float(p.detach().mean()),
            "max": float(p.detach().max()),
        }
        for i, p in enumerate(per_level)
    ]


def train_step(
    model: RecognitionModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    sample_ids: list[str],
    optimizer: torch.optim.Optimizer,
    epsilon: float,
) -> float:
    """One forward and one backward pass over the batch; returns the loss."""
    model.train()
    output = model(images)
    loss = training_loss(model.loss_kind, labels, output.per_level, epsilon)
    if not torch.isfinite(loss):
        raise NumericalError(
            "non-finite loss; batch="
            + ",".join(sample_ids[:8])
            + f" level_stats={_score_stats(output.per_level)}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def _epoch_order(config: TrainConfig, dataset: ManifestDataset, epoch: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, epoch])
    if not config.balanced_sampler:
        return rng.permutation(len(dataset))
    # Draw with replacement, positives upweighted to ~half the epoch.
    pos = dataset.labels.max(axis=1) > 0
    n_pos = int(pos.sum())
    weights = np.where(pos, 0.5 / max(n_pos, 1), 0.5 / max(len(dataset) - n_pos, 1))
    weights /= weights.sum()
    return rng.choice(len(dataset), size=len(dataset), replace=True, p=weights)


def validation_map(model: RecognitionModel, dataset: ManifestDataset, batch_size: int) -> float:
    from .evalkit import ranked_mean_ap

    model.eval()
    scores = []
    with torch.no_grad():
        for images, _, _ in dataset.iter_batches(batch_size):
            scores.append(model(images).fused.numpy())
    fused = np.concatenate(scores) if scores else np.zeros((0, model.head.config.num_classes))
    return ranked_mean_ap(fused, dataset.labels, dataset.sample_ids)


def train(
    config: TrainConfig,
    train_manifest: DatasetManifest,
    val_manifest: Optional[DatasetManifest] = None,
    out_dir: Path | str = "run",
    resume: bool = False,
    stop_after_epoch: Optional[int] = None,
) -> Path:
    """Run the training loop; returns the final checkpoint path.

    ``stop_after_epoch`` ends the run early (checkpoint intact) so a later
    ``resume=True`` call with the same config continues bit-identically.
    """
    if len(train_manifest) == 0:
        raise DataError("train manifest is empty")
    if not any(e.is_positive() for e in train_manifest.entries):
        raise DataError(
            "train manifest has no positive samples; training would collapse "
            "to the negative class"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"checkpoint_seed{config.seed}.npz"

    model = build_model(config)
    optimizer = build_optimizer(config, model)
    start_epoch = 0
    if resume:
        if not ckpt_path.is_file():
            raise ConfigError(f"--resume requested but no checkpoint at {ckpt_path}")
        arrays, meta = read_checkpoint(ckpt_path)
        if TrainConfig.from_dict(meta["config"]) != config:
            raise ConfigError("resume config differs from checkpointed config")
        load_state_arrays(
            model,
            {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")},
        )
        _restore_optimizer(arrays, model, optimizer)
        start_epoch = int(meta["epoch"])

    metrics = _MetricsLog(out_dir / f"metrics_seed{config.seed}.jsonl", append=resume)
    dataset = ManifestDataset(train_manifest)
    val_dataset = ManifestDataset(val_manifest) if val_manifest is not None else None

    if config.epochs == 0 and not resume:
        save_checkpoint(ckpt_path, model, optimizer, config, epoch=0)
        return ckpt_path

    last_epoch = config.epochs if stop_after_epoch is None else min(
        stop_after_epoch, config.epochs
    )
    for epoch in range(start_epoch, last_epoch):
        t0 = time.perf_counter()
        lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = _epoch_order(config, dataset, epoch)
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            images, labels, ids = dataset.batch(order[start : start + config.batch_size].tolist())
            total += train_step(model, images, labels, ids, optimizer, config.epsilon)
            batches += 1
        mean_loss = total / max(batches, 1)
        metrics.write(epoch + 1, "train", "loss", mean_loss)
        logger.info(
            "epoch %d/%d loss %.4f lr %.4g (%.1fs)",
            epoch + 1, config.epochs, mean_loss, lr, time.perf_counter() - t0,
        )
        if (
            val_dataset is not None
            and config.eval_interval > 0
            and (epoch + 1) % config.eval_interval == 0
        ):
            vmap = validation_map(model, val_dataset, config.batch_size)
            metrics.write(epoch + 1, "val", "map", vmap)
            logger.info("epoch %d validation mAP %.4f", epoch + 1, vmap)
        save_checkpoint(ckpt_path, model, optimizer, config, epoch=epoch + 1)
    if not ckpt_path.is_file():
        save_checkpoint(ckpt_path, model, optimizer, config, epoch=start_epoch)
    return ckpt_path
