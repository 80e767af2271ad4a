"""Dataset discovery, deterministic stratified splitting, and image preprocessing.

The on-disk layout is one subdirectory per class under a root directory.
A manifest freezes the discovered corpus (sorted by path, labels mapped
through a lexicographic class order) so every downstream artifact is
reproducible from (manifest, ratios, seed) alone.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

# ImageNet channel statistics; the default because every backbone in the
# registry ships with ImageNet-pretrained weights.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TARGET_SIZE = 224


class DatasetError(Exception):
    """Fatal problem with the dataset layout or contents."""


class ImageDecodeError(Exception):
    """A single image could not be decoded; carries the offending image id."""

    def __init__(self, image_id: str, reason: str):
        super().__init__(f"cannot decode image {image_id!r}: {reason}")
        self.image_id = image_id


@dataclass(frozen=True)
class LabelSpace:
    """Canonical ordered set of class names (lexicographic)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise DatasetError(f"need at least 2 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise DatasetError("class names must be unique")
        if list(self.names) != sorted(self.names):
            raise DatasetError("class names must be lexicographically sorted")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str  # class-relative posix path, stable across machines
    path: str      # path relative to source_root
    label: int


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    label_space: LabelSpace
    source_root: str

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DatasetError("image ids must be unique")
        for e in self.entries:
            if not 0 <= e.label < self.label_space.size:
                raise DatasetError(f"label {e.label} out of range for {e.image_id}")

    def class_counts(self) -> list[int]:
        counts = [0] * self.label_space.size
        for e in self.entries:
            counts[e.label] += 1
        return counts

    def abs_path(self, entry: ManifestEntry) -> Path:
        return Path(self.source_root) / entry.path


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    ratios: tuple[float, float, float]
    seed: int

    def split_of(self, image_id: str) -> str:
        for name in ("train", "val", "test"):
            if image_id in set(getattr(self, name)):
                return name
        raise KeyError(image_id)


def build_manifest(root: str | Path) -> DatasetManifest:
    """Discover a directory-per-class image tree and freeze it into a manifest.

    Non-image files are skipped (counted in a warning). A class directory
    with no readable images is fatal so a class can never silently vanish.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"data root {root} is not a directory")

    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DatasetError(f"data root {root} contains no class directories")

    label_space = LabelSpace(tuple(d.name for d in class_dirs))

    entries: list[ManifestEntry] = []
    skipped = 0
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.rglob("*") if p.is_file())
        images = [p for p in files if p.suffix.lower() in IMAGE_EXTENSIONS]
        skipped += len(files) - len(images)
        if not images:
            raise DatasetError(f"class directory {class_dir} has no readable images")
        for p in images:
            rel = p.relative_to(root).as_posix()
            entries.append(ManifestEntry(image_id=rel, path=rel, label=label))
    if skipped:
        logger.warning("skipped %d non-image files under %s", skipped, root)

    entries.sort(key=lambda e: e.path)
    return DatasetManifest(tuple(entries), label_space, str(root))


def stratified_split(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float],
    seed: int,
) -> SplitAssignment:
    """Deterministic per-class split: floor(train), floor(val), remainder to test.

    Each class is shuffled with an RNG keyed by (seed, class name), so the
    assignment depends only on manifest contents, ratios, and seed.
    """
    train_frac, val_frac, test_frac = ratios
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1.0, got {ratios} (sum {sum(ratios)})")

    by_class: dict[int, list[str]] = {c: [] for c in range(manifest.label_space.size)}
    for e in manifest.entries:
        by_class[e.label].append(e.image_id)

    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng = random.Random(f"{seed}|{manifest.label_space.names[label]}")
        rng.shuffle(ids)
        n = len(ids)
        n_train = math.floor(n * train_frac + 1e-9)
        n_val = math.floor(n * val_frac + 1e-9)
        train.extend(ids[:n_train])
        val.extend(ids[n_train : n_train + n_val])
        class_test = ids[n_train + n_val :]
        test.extend(class_test)
        if test_frac > 0 and not class_test:
            logger.warning(
                "class %r received zero test images and cannot be evaluated",
                manifest.label_space.names[label],
            )
    return SplitAssignment(tuple(train), tuple(val), tuple(test), tuple(ratios), seed)


def load_image(path: str | Path, image_id: str | None = None) -> np.ndarray:
    """Decode an image file to an HxWx3 uint8 array."""
    image_id = image_id if image_id is not None else str(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(image_id, str(exc)) from exc


def preprocess(
    pixels: np.ndarray,
    mean: tuple[float, float, float] = IMAGENET_MEAN,
    std: tuple[float, float, float] = IMAGENET_STD,
) -> np.ndarray:
    """Bilinear-resize to 224x224 and standardize channels.

    Inputs already at 224x224 pass through the resize untouched
    (pixel-exact), so preprocessing is idempotent on conforming data.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected HxWx3 array, got shape {pixels.shape}")
    if pixels.shape[:2] != (TARGET_SIZE, TARGET_SIZE):
        img = Image.fromarray(pixels)
        img = img.resize((TARGET_SIZE, TARGET_SIZE), Image.BILINEAR)
        pixels = np.asarray(img, dtype=np.uint8)
    out = pixels.astype(np.float32) / 255.0
    out = (out - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return out


# ---------------------------------------------------------------------------
# Persistence: line-delimited tab-separated records, byte-exact round trip.
# ---------------------------------------------------------------------------

_MANIFEST_HEADER = "image_id\tpath\tlabel\tclass_name"
_SPLIT_HEADER = "image_id\tsplit"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [f"# root={manifest.source_root}", _MANIFEST_HEADER]
    for e in manifest.entries:
        lines.append(f"{e.image_id}\t{e.path}\t{e.label}\t{manifest.label_space.names[e.label]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# root=") or lines[1] != _MANIFEST_HEADER:
        raise DatasetError(f"malformed manifest file {path}")
    root = lines[0][len("# root=") :]
    entries = []
    names: dict[int, str] = {}
    for line in lines[2:]:
        image_id, rel, label, class_name = line.split("\t")
        entries.append(ManifestEntry(image_id, rel, int(label)))
        names[int(label)] = class_name
    label_space = LabelSpace(tuple(names[i] for i in sorted(names)))
    return DatasetManifest(tuple(entries), label_space, root)


def save_split(split: SplitAssignment, path: str | Path) -> None:
    ratios = ",".join(repr(r) for r in split.ratios)
    lines = [f"# ratios={ratios} seed={split.seed}", _SPLIT_HEADER]
    for name in ("train", "val", "test"):
        for image_id in getattr(split, name):
            lines.append(f"{image_id}\t{name}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path: str | Path) -> SplitAssignment:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# ratios=") or lines[1] != _SPLIT_HEADER:
        raise DatasetError(f"malformed split file {path}")
    meta = lines[0][2:]
    ratios_part, seed_part = meta.split(" seed=")
    ratios = tuple(float(r) for r in ratios_part[len("ratios=") :].split(","))
    parts: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for line in lines[2:]:
        image_id, name = line.split("\t")
        parts[name].append(image_id)
    return SplitAssignment(
        tuple(parts["train"]), tuple(parts["val"]), tuple(parts["test"]),
        ratios, int(seed_part),
    )
