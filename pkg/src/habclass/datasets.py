"""Torch-facing dataset adapters over manifests and in-memory tensors.

Items are (CHW float32 tensor, int label). The counting wrapper backs the
test-split hygiene audit: it records how many reads a split has served.
"""

from __future__ import annotations

import torch

from .data import DatasetManifest, SplitAssignment, load_image, preprocess


class TensorImageDataset:
    """In-memory dataset of pre-built image tensors (synthetic/test data)."""

    def __init__(self, images: torch.Tensor, labels: torch.Tensor):
        if len(images) != len(labels):
            raise ValueError("images and labels length mismatch")
        self.images = images
        self.labels = labels

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> tuple[torch.Tensor, int]:
        return self.images[i], int(self.labels[i])


class ManifestImageDataset:
    """Lazy loader over a manifest restricted to one split's image ids."""

    def __init__(
        self,
        manifest: DatasetManifest,
        split: SplitAssignment | None = None,
        split_name: str | None = None,
        mean=None,
        std=None,
    ):
        if split is not None:
            wanted = set(getattr(split, split_name))
            self.entries = [e for e in manifest.entries if e.image_id in wanted]
        else:
            self.entries = list(manifest.entries)
        self.manifest = manifest
        kwargs = {}
        if mean is not None:
            kwargs["mean"] = tuple(mean)
        if std is not None:
            kwargs["std"] = tuple(std)
        self._pp_kwargs = kwargs

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> tuple[torch.Tensor, int]:
        entry = self.entries[i]
        pixels = load_image(self.manifest.abs_path(entry), image_id=entry.image_id)
        arr = preprocess(pixels, **self._pp_kwargs)
        tensor = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
        return tensor, entry.label


class CountingDataset:
    """Wrapper that counts item reads, for access auditing."""

    def __init__(self, inner):
        self.inner = inner
        self.reads = 0

    def __len__(self) -> int:
        return len(self.inner)

    def __getitem__(self, i: int):
        self.reads += 1
        return self.inner[i]
