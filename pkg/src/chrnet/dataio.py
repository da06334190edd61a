"""Batched image access over dataset manifests."""

from __future__ import annotations

from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from .data import DatasetManifest, load_image
from .errors import DataError

# In-memory uint8 caching is skipped above this footprint.
CACHE_LIMIT_BYTES = 1_500_000_000


class ManifestDataset:
    """Lazy image loader with an optional whole-set uint8 cache."""

    def __init__(self, manifest: DatasetManifest, cache: bool = True):
        if manifest.root is None:
            raise DataError("manifest has no root directory to resolve images against")
        self.manifest = manifest
        self.entries = manifest.entries
        self.labels = np.array(
            [e.labels.observed for e in self.entries], dtype=np.float32
        ).reshape(len(self.entries), -1)
        self.sample_ids = [e.sample_id for e in self.entries]
        self._cache: Optional[list[Optional[np.ndarray]]] = None
        if cache and self.entries:
            probe = load_image(manifest.image_path(self.entries[0]))
            if probe.nbytes // 4 * len(self.entries) <= CACHE_LIMIT_BYTES:
                self._cache = [None] * len(self.entries)
                self._cache[0] = np.round(probe * 255.0).astype(np.uint8)

    def __len__(self) -> int:
        return len(self.entries)

    def image(self, idx: int) -> np.ndarray:
        if self._cache is not None:
            cached = self._cache[idx]
            if cached is None:
                cached = np.round(
                    load_image(self.manifest.image_path(self.entries[idx])) * 255.0
                ).astype(np.uint8)
                self._cache[idx] = cached
            return cached.astype(np.float32) / 255.0
        return load_image(self.manifest.image_path(self.entries[idx]))

    def batch(self, indices: Sequence[int]) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
        """Stack images [B, 3, H, W], labels [B, C'], and sample ids."""
        images = np.stack([self.image(i) for i in indices])
        tensor = torch.from_numpy(images).permute(0, 3, 1, 2).contiguous()
        labels = torch.from_numpy(self.labels[list(indices)])
        ids = [self.sample_ids[i] for i in indices]
        return tensor, labels, ids

    def iter_batches(
        self, batch_size: int, order: Optional[np.ndarray] = None
    ) -> Iterator[tuple[torch.Tensor, torch.Tensor, list[str]]]:
        idx = np.arange(len(self)) if order is None else order
        for start in range(0, len(idx), batch_size):
            yield self.batch(idx[start : start + batch_size].tolist())
