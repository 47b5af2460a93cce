"""Desk-scale datasets: Gaussian blobs, two moons, and IDX file loading.

The synthetic generators stand in for the image benchmarks the pruning
literature trains on; they are deterministic per seed so paired method
comparisons see identical data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Rng

__all__ = [
    "BadMagic",
    "TruncatedFile",
    "CountMismatch",
    "Dataset",
    "gen_blobs",
    "gen_two_moons",
    "load_idx",
    "concat_datasets",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class CountMismatch(ValueError):
    pass


@dataclass
class Dataset:
    """Features, integer labels, and a per-sample train/test tag."""

    features: np.ndarray  # (n, dims) float64
    labels: np.ndarray    # (n,) int64
    split: np.ndarray     # (n,) "train" | "test"
    num_classes: int

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ValueError("features, labels and split lengths differ")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside class range")

    def _part(self, tag: str):
        mask = self.split == tag
        return self.features[mask], self.labels[mask]

    @property
    def train_x(self):
        return self._part("train")[0]

    @property
    def train_y(self):
        return self._part("train")[1]

    @property
    def test_x(self):
        return self._part("test")[0]

    @property
    def test_y(self):
        return self._part("test")[1]

    @property
    def dims(self) -> int:
        return self.features.shape[1]


def _spread_centers(rng: Rng, classes: int, dims: int, separation: float):
    """Random centers with pairwise distance >= separation."""
    centers = []
    for _ in range(classes):
        for _attempt in range(1000):
            c = rng.normal(dims, 0.0, max(separation, 1.0))
            if all(np.linalg.norm(c - prev) >= separation for prev in centers):
                centers.append(c)
                break
        else:
            raise RuntimeError("could not place blob centers; lower separation")
    return centers


def gen_blobs(rng: Rng, classes: int, samples_per_class: int, dims: int,
              separation: float, test_per_class: int | None = None) -> Dataset:
    """Unit-variance Gaussian clusters around well-separated centers."""
    if separation <= 0:
        raise ValueError("separation must be positive")
    if test_per_class is None:
        test_per_class = max(1, samples_per_class // 4)
    centers = _spread_centers(rng, classes, dims, separation)

    feats, labels, tags = [], [], []
    for cls, center in enumerate(centers):
        for count, tag in ((samples_per_class, "train"), (test_per_class, "test")):
            pts = rng.normal(count * dims, 0.0, 1.0).reshape(count, dims) + center
            feats.append(pts)
            labels.append(np.full(count, cls, dtype=np.int64))
            tags.append(np.full(count, tag))
    return Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        split=np.concatenate(tags),
        num_classes=classes,
    )


def gen_two_moons(rng: Rng, samples_per_class: int, noise: float = 0.15,
                  test_per_class: int | None = None) -> Dataset:
    """The classic interleaved half-circles, 2 classes in 2 dims."""
    if test_per_class is None:
        test_per_class = max(1, samples_per_class // 4)

    feats, labels, tags = [], [], []
    for count, tag in ((samples_per_class, "train"), (test_per_class, "test")):
        t = rng.uniform(count, 0.0, np.pi)
        upper = np.stack([np.cos(t), np.sin(t)], axis=1)
        t = rng.uniform(count, 0.0, np.pi)
        lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        pts = np.concatenate([upper, lower])
        pts += rng.normal(pts.size, 0.0, noise).reshape(pts.shape)
        feats.append(pts)
        labels.append(np.concatenate([np.zeros(count, np.int64), np.ones(count, np.int64)]))
        tags.append(np.full(2 * count, tag))
    return Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        split=np.concatenate(tags),
        num_classes=2,
    )


def _read_header(buf: bytes, path, expect_magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise TruncatedFile(f"{path}: header truncated")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expect_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    dims = struct.unpack(f">{n_dims}I", buf[4:need])
    return dims, buf[need:]


def load_idx(images_path, labels_path, tag: str = "train") -> Dataset:
    """Load an IDX image/label pair (MNIST wire format).

    Pixels come back as float64 in [0, 1], flattened to rows; every
    sample carries the given split tag.
    """
    with open(images_path, "rb") as f:
        buf = f.read()
    (count, rows, cols), body = _read_header(buf, images_path, IDX_IMAGE_MAGIC, 3)
    if len(body) < count * rows * cols:
        raise TruncatedFile(f"{images_path}: expected {count * rows * cols} pixels")
    pixels = np.frombuffer(body[: count * rows * cols], dtype=np.uint8)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        buf = f.read()
    (label_count,), body = _read_header(buf, labels_path, IDX_LABEL_MAGIC, 1)
    if len(body) < label_count:
        raise TruncatedFile(f"{labels_path}: expected {label_count} labels")
    labels = np.frombuffer(body[:label_count], dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise CountMismatch(f"{count} images vs {label_count} labels")
    num_classes = int(labels.max()) + 1 if count else 1
    return Dataset(features, labels, np.full(count, tag), num_classes)


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Merge two datasets (e.g. a train-tagged and a test-tagged IDX pair)."""
    if a.dims != b.dims:
        raise ValueError("feature widths differ")
    return Dataset(
        features=np.concatenate([a.features, b.features]),
        labels=np.concatenate([a.labels, b.labels]),
        split=np.concatenate([a.split, b.split]),
        num_classes=max(a.num_classes, b.num_classes),
    )
