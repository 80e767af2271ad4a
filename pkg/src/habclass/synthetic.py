"""Synthetic colored-shape image generators for tests and smoke runs.

Each class is a distinct (fill color, shape) combination drawn with noise
on a dark background, so a classifier can learn the task quickly from
random initialization.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .datasets import TensorImageDataset

_SHAPES = ("circle", "square", "triangle", "cross")

# Bright, well-separated fill colors; combined with shapes this yields
# len(_COLORS) * len(_SHAPES) distinguishable classes.
_COLORS = (
    (230, 40, 40), (40, 200, 40), (60, 80, 230), (230, 220, 40),
    (230, 40, 220), (40, 220, 220), (240, 140, 30), (150, 60, 220),
    (130, 220, 100), (240, 120, 160), (120, 120, 120), (250, 250, 250),
)


def _draw_shape(size: int, class_idx: int, rng: np.random.Generator) -> np.ndarray:
    color = _COLORS[class_idx % len(_COLORS)]
    shape = _SHAPES[(class_idx // len(_COLORS)) % len(_SHAPES)]
    img = Image.new("RGB", (size, size), (15, 15, 15))
    draw = ImageDraw.Draw(img)
    margin = size // 4
    jitter = lambda: int(rng.integers(-size // 10, size // 10 + 1))
    x0, y0 = margin + jitter(), margin + jitter()
    x1, y1 = size - margin + jitter(), size - margin + jitter()
    x0, x1 = min(x0, x1 - 4), max(x1, x0 + 4)
    y0, y1 = min(y0, y1 - 4), max(y1, y0 + 4)
    if shape == "circle":
        draw.ellipse([x0, y0, x1, y1], fill=color)
    elif shape == "square":
        draw.rectangle([x0, y0, x1, y1], fill=color)
    elif shape == "triangle":
        draw.polygon([(x0, y1), (x1, y1), ((x0 + x1) // 2, y0)], fill=color)
    else:
        w = max(2, (x1 - x0) // 4)
        cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
        draw.rectangle([cx - w, y0, cx + w, y1], fill=color)
        draw.rectangle([x0, cy - w, x1, cy + w], fill=color)
    arr = np.asarray(img, dtype=np.float32)
    arr += rng.normal(0, 8, arr.shape)
    return np.clip(arr, 0, 255).astype(np.uint8)


def make_shape_dataset(
    num_classes: int,
    per_class: int,
    image_size: int = 64,
    seed: int = 0,
    normalize: bool = True,
) -> TensorImageDataset:
    """Build an in-memory dataset of shape images as CHW float tensors."""
    if num_classes > len(_COLORS) * len(_SHAPES):
        raise ValueError(f"at most {len(_COLORS) * len(_SHAPES)} classes supported")
    rng = np.random.default_rng(seed)
    images = []
    labels = []
    for c in range(num_classes):
        for _ in range(per_class):
            arr = _draw_shape(image_size, c, rng).astype(np.float32) / 255.0
            if normalize:
                arr = (arr - 0.5) / 0.5
            images.append(torch.from_numpy(arr).permute(2, 0, 1))
            labels.append(c)
    return TensorImageDataset(torch.stack(images), torch.tensor(labels))


def write_shape_image_tree(
    root: str | Path,
    class_counts: dict[str, int],
    image_size: int = 64,
    seed: int = 0,
) -> Path:
    """Write a directory-per-class PNG tree (exercises the full ingest path)."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for idx, name in enumerate(sorted(class_counts)):
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(class_counts[name]):
            arr = _draw_shape(image_size, idx, rng)
            Image.fromarray(arr).save(class_dir / f"{name}_{i:04d}.png")
    return root
