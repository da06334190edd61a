"""Per-level BCE losses with hierarchically gated class balancing.

Each level contributes a per-class BCE loss vector dotted with a binary gate
vector. Gates keep every positive class everywhere; a negative class stays
active at a level only when its prediction there exceeds ``epsilon`` AND it
is still active at every higher level, so once a level switches a class off
the decision cascades down to all finer levels. Gates are computed from
detached predictions; gradients flow through the loss vector only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

LOG_CLAMP = 1e-7
LOSS_KINDS = ("plain", "balanced")


@dataclass
class GateMask:
    """Binary loss weights, one [B, C'] tensor per level (finest first)."""

    levels: list[torch.Tensor]
    epsilon: float

    def all_ones(self) -> bool:
        return all(bool((w == 1).all()) for w in self.levels)


def bce_vector(y_true: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Elementwise binary cross entropy; probabilities clamped away from {0,1}."""
    p = probs.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -(y_true * torch.log(p) + (1.0 - y_true) * torch.log(1.0 - p))


def compute_gates(
    y_true: torch.Tensor,
    level_probs: Sequence[torch.Tensor],
    epsilon: float,
) -> GateMask:
    """Cascaded gate masks from detached per-level predictions.

    ``level_probs`` is ordered finest (level 1) to coarsest (level L); the
    cascade starts at the top level and propagates an AND downward.
    """
    num_levels = len(level_probs)
    gates: list[torch.Tensor] = [None] * num_levels  # type: ignore
    above = None
    for l in range(num_levels - 1, -1, -1):
        p = level_probs[l].detach()
        local = torch.where(y_true > 0.5, torch.ones_like(p), (p > epsilon).to(p.dtype))
        gates[l] = local if above is None else local * above
        above = gates[l]
    return GateMask(levels=gates, epsilon=epsilon)


def chr_loss(
    y_true: torch.Tensor,
    level_probs: Sequence[torch.Tensor],
    gates: GateMask,
) -> torch.Tensor:
    """Mean over levels of the gated per-class BCE sum, averaged over the batch."""
    per_level = [
        (w * bce_vector(y_true, p)).sum(dim=-1)
        for w, p in zip(gates.levels, level_probs)
    ]
    return torch.stack(per_level).mean(dim=0).mean()


def plain_bce_loss(
    y_true: torch.Tensor, level_probs: Sequence[torch.Tensor]
) -> torch.Tensor:
    """Ungated baseline: identical to the gated loss with all-ones gates."""
    per_level = [bce_vector(y_true, p).sum(dim=-1) for p in level_probs]
    return torch.stack(per_level).mean(dim=0).mean()


def training_loss(
    kind: str,
    y_true: torch.Tensor,
    level_probs: Sequence[torch.Tensor],
    epsilon: float,
) -> torch.Tensor:
    if kind == "plain":
        return plain_bce_loss(y_true, level_probs)
    if kind == "balanced":
        return chr_loss(y_true, level_probs, compute_gates(y_true, level_probs, epsilon))
    raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
