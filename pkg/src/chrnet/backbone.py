"""Small configurable convolutional feature extractor with pyramid taps.

A stride-2 stem followed by ``S`` stages of [conv3x3 -> batchnorm -> ReLU]
blocks, each stage entering at stride 2. Selected stages ("taps") feed the
feature pyramid; consecutive taps differ by exactly a factor 2 in spatial
resolution. Convolutions carry no bias (batchnorm provides the affine part),
so a zero image yields an all-zero pyramid at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 12
    channels: tuple[int, ...] = (24, 32, 48, 64)
    blocks_per_stage: int = 2
    taps: tuple[int, ...] = (1, 2, 3)  # stage indices feeding the pyramid
    input_hw: tuple[int, int] = (96, 96)

    def __post_init__(self):
        if len(self.taps) < 2:
            raise ConfigError("need at least 2 taps")
        if any(t < 0 or t >= len(self.channels) for t in self.taps):
            raise ConfigError(f"tap indices {self.taps} outside stages 0..{len(self.channels) - 1}")
        if list(self.taps) != sorted(set(self.taps)):
            raise ConfigError(f"taps must be strictly increasing, got {self.taps}")
        # Consecutive taps must differ by one stage so resolutions halve exactly.
        if any(b - a != 1 for a, b in zip(self.taps, self.taps[1:])):
            raise ConfigError(f"taps must be consecutive stages, got {self.taps}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        stride = self.total_stride
        h, w = self.input_hw
        if h % stride or w % stride:
            raise ConfigError(
                f"input {h}x{w} not divisible by total stride {stride}; "
                "tap resolutions would not halve exactly"
            )

    @property
    def num_levels(self) -> int:
        return len(self.taps)

    @property
    def total_stride(self) -> int:
        # Stem stride 2, then one stride-2 entry per stage up to the last tap.
        return 2 ** (max(self.taps) + 2)

    def tap_stride(self, level: int) -> int:
        return 2 ** (self.taps[level] + 2)

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, H, W) for each pyramid level, finest first."""
        h, w = self.input_hw
        return [
            (self.channels[t], h // self.tap_stride(i), w // self.tap_stride(i))
            for i, t in enumerate(self.taps)
        ]

    def tap_channels(self) -> list[int]:
        return [self.channels[t] for t in self.taps]

    def param_count(self) -> int:
        """Closed-form trainable parameter count (conv weights + batchnorm affine)."""
        total = 9 * 3 * self.stem_channels + 2 * self.stem_channels
        prev = self.stem_channels
        for ch in self.channels:
            total += 9 * prev * ch + 2 * ch
            total += (self.blocks_per_stage - 1) * (9 * ch * ch + 2 * ch)
            prev = ch
        return total


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm = nn.BatchNorm2d(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class PyramidBackbone(nn.Module):
    """Feature extractor returning one feature map per configured tap."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.stem = ConvBlock(3, config.stem_channels, stride=2)
        stages = []
        prev = config.stem_channels
        for ch in config.channels:
            blocks = [ConvBlock(prev, ch, stride=2)]
            blocks += [ConvBlock(ch, ch) for _ in range(config.blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            prev = ch
        self.stages = nn.ModuleList(stages)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Batch of [B, 3, H, W] images -> list of L feature maps, finest first."""
        h, w = self.config.input_hw
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (h, w):
            raise ConfigError(
                f"expected input [B, 3, {h}, {w}], got {tuple(images.shape)}"
            )
        tap_set = set(self.config.taps)
        x = self.stem(images)
        pyramid = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i in tap_set:
                pyramid.append(x)
            if i >= max(tap_set):
                break
        return pyramid
