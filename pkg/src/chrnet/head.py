"""Hierarchical refinement head and per-level classifiers.

Refinement runs coarse-to-fine: the top pyramid level passes through
unchanged, and every finer level is recomputed from the concatenation of its
raw features with the 2x-upsampled refined features of the level above
(nearest-neighbor, one 1x1 projection per connection -- L-1 connections in
total). Each level then feeds a GAP + linear + sigmoid classifier whose
weight rows double as class-activation projections; the fused output is the
arithmetic mean of the per-level scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

VARIANTS = ("baseline", "H", "CH", "HR", "CHR")

# variant -> (use all pyramid levels, apply refinement, loss kind)
VARIANT_WIRING: dict[str, tuple[bool, bool, str]] = {
    "baseline": (False, False, "plain"),
    "H": (True, False, "plain"),
    "CH": (True, False, "balanced"),
    "HR": (True, True, "plain"),
    "CHR": (True, True, "balanced"),
}


@dataclass(frozen=True)
class HeadConfig:
    width: int = 128  # refined channels per connection
    num_classes: int = 5
    norm: str = "batch"  # "batch" | "none"
    # Classifier biases start at logit(prior) so initial scores match the rare
    # positive rate instead of 0.5; without this, heavily imbalanced batches
    # stampede every score downward in the first steps and the gated loss
    # then switches off before features exist.
    prior: float = 0.01

    def __post_init__(self):
        if self.norm not in ("batch", "none"):
            raise ConfigError(f"head norm must be batch|none, got {self.norm!r}")
        if self.width < 1 or self.num_classes < 1:
            raise ConfigError("head width and num_classes must be >= 1")
        if not 0.0 < self.prior < 1.0:
            raise ConfigError(f"prior {self.prior} outside (0, 1)")


@dataclass
class HeadOutput:
    """Per-level probabilities, their mean, and the features that produced them."""

    per_level: list[torch.Tensor]  # L tensors of [B, C'] probabilities
    fused: torch.Tensor  # [B, C'] mean over levels
    features: list[torch.Tensor]  # the maps each classifier consumed
    logits: list[torch.Tensor]  # pre-sigmoid per-level logits


class RefinementBlock(nn.Module):
    """Projects concat(raw level, upsampled refined upper level) back to a map
    with the raw level's spatial dims."""

    def __init__(self, in_channels: int, width: int, norm: str = "batch"):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, width, 1, bias=(norm == "none"))
        self.norm = nn.BatchNorm2d(width) if norm == "batch" else nn.Identity()
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class LevelClassifier(nn.Module):
    """Global average pooling followed by one linear map and a sigmoid."""

    def __init__(self, in_channels: int, num_classes: int, prior: float = 0.01):
        super().__init__()
        self.fc = nn.Linear(in_channels, num_classes)
        with torch.no_grad():
            self.fc.bias.fill_(math.log(prior / (1.0 - prior)))

    def logits(self, feat: torch.Tensor) -> torch.Tensor:
        return self.fc(feat.mean(dim=(2, 3)))

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(feat))

    def cam(self, feat: torch.Tensor, class_id: int) -> torch.Tensor:
        """Heatmap [B, H, W]: per-position dot product with one weight row.

        No normalization; mean over positions plus the bias recovers the
        pre-sigmoid logit exactly.
        """
        if not 0 <= class_id < self.fc.out_features:
            raise ConfigError(
                f"class_id {class_id} outside [0, {self.fc.out_features})"
            )
        weight = self.fc.weight[class_id]
        return torch.einsum("c,bchw->bhw", weight, feat)

    def cams(self, feat: torch.Tensor) -> torch.Tensor:
        """All-class heatmaps [B, C', H, W]."""
        return torch.einsum("oc,bchw->bohw", self.fc.weight, feat)


class RefinementHead(nn.Module):
    """Per-level classifiers with optional reversed neighbor connections."""

    def __init__(
        self,
        tap_channels: Sequence[int],
        config: HeadConfig = HeadConfig(),
        refine: bool = True,
    ):
        super().__init__()
        self.config = config
        self.use_refinement = refine and len(tap_channels) > 1
        self.num_levels = len(tap_channels)
        if self.use_refinement:
            # blocks[l] refines level l (0-based, finest first); the top level
            # has no block. Level L-2 sees the raw top map, lower levels see
            # already-refined (width-channel) maps.
            blocks = []
            for l in range(self.num_levels - 1):
                upper = (
                    tap_channels[l + 1]
                    if l == self.num_levels - 2
                    else config.width
                )
                blocks.append(
                    RefinementBlock(tap_channels[l] + upper, config.width, config.norm)
                )
            self.blocks = nn.ModuleList(blocks)
            clf_channels = [config.width] * (self.num_levels - 1) + [tap_channels[-1]]
        else:
            self.blocks = nn.ModuleList()
            clf_channels = list(tap_channels)
        self.classifiers = nn.ModuleList(
            LevelClassifier(c, config.num_classes, config.prior) for c in clf_channels
        )

    def refine(self, pyramid: list[torch.Tensor]) -> list[torch.Tensor]:
        """Coarse-to-fine refinement; the top level passes through unchanged."""
        if len(pyramid) != self.num_levels:
            raise ConfigError(
                f"pyramid has {len(pyramid)} levels, head expects {self.num_levels}"
            )
        if not self.use_refinement:
            return list(pyramid)
        refined: list[torch.Tensor] = [None] * self.num_levels  # type: ignore
        refined[-1] = pyramid[-1]
        for l in range(self.num_levels - 2, -1, -1):
            upper = F.interpolate(refined[l + 1], scale_factor=2, mode="nearest")
            if upper.shape[2:] != pyramid[l].shape[2:]:
                raise ConfigError(
                    f"level {l + 1}: upsampled shape {tuple(upper.shape[2:])} does not "
                    f"match level {l} shape {tuple(pyramid[l].shape[2:])}"
                )
            refined[l] = self.blocks[l](torch.cat([pyramid[l], upper], dim=1))
        return refined

    def classify(self, features: list[torch.Tensor]) -> HeadOutput:
        logits = [clf.logits(f) for clf, f in zip(self.classifiers, features)]
        per_level = [torch.sigmoid(z) for z in logits]
        fused = torch.stack(per_level).mean(dim=0)
        return HeadOutput(per_level=per_level, fused=fused, features=features, logits=logits)

    def forward(self, pyramid: list[torch.Tensor]) -> HeadOutput:
        return self.classify(self.refine(pyramid))

    def cams(self, features: list[torch.Tensor]) -> list[torch.Tensor]:
        """Per-level all-class heatmaps from the maps the classifiers consume."""
        return [clf.cams(f) for clf, f in zip(self.classifiers, features)]
