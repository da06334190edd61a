"""Model assembly per ablation variant, plus flat-array checkpoint payloads.

Variants: ``baseline`` classifies the top pyramid level only; ``H``/``CH``
attach per-level classifiers to the raw taps; ``HR``/``CHR`` add the reversed
refinement connections. The C/- prefix selects the balanced loss and is
resolved by the trainer, not here.

Checkpoints store a flat map from slash-separated parameter paths (namespaces
``backbone/`` and ``head/``) to arrays; float32 payloads round-trip
bit-exactly.
"""

from __future__ import annotations

import torch
import torch.nn as nn

import numpy as np

from .backbone import BackboneConfig, PyramidBackbone
from .errors import ConfigError
from .head import HeadConfig, HeadOutput, RefinementHead, VARIANT_WIRING, VARIANTS


class RecognitionModel(nn.Module):
    """Backbone plus head wired for one ablation variant."""

    def __init__(
        self,
        variant: str,
        backbone_config: BackboneConfig,
        head_config: HeadConfig,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.all_levels, self.refine, self.loss_kind = VARIANT_WIRING[variant]
        self.backbone = PyramidBackbone(backbone_config)
        taps = backbone_config.tap_channels()
        if not self.all_levels:
            taps = taps[-1:]
        self.head = RefinementHead(taps, head_config, refine=self.refine)

    def pyramid(self, images: torch.Tensor) -> list[torch.Tensor]:
        levels = self.backbone(images)
        return levels if self.all_levels else levels[-1:]

    def forward(self, images: torch.Tensor) -> HeadOutput:
        return self.head(self.pyramid(images))


def build_model(
    variant: str,
    backbone_config: BackboneConfig | None = None,
    head_config: HeadConfig | None = None,
) -> RecognitionModel:
    return RecognitionModel(
        variant,
        backbone_config or BackboneConfig(),
        head_config or HeadConfig(),
    )


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    """Flatten parameters and buffers to slash-separated paths."""
    return {
        name.replace(".", "/"): tensor.detach().cpu().numpy().copy()
        for name, tensor in model.state_dict().items()
    }


def load_state_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    # .copy() keeps 0-d arrays 0-d (ascontiguousarray would promote them)
    state = {
        name.replace("/", "."): torch.from_numpy(arr.copy())
        for name, arr in arrays.items()
    }
    model.load_state_dict(state, strict=True)
