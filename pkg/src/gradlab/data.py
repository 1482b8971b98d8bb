"""Dataset ingestion, synthesis, and deterministic batching.

MNIST files use the IDX binary layout: a big-endian uint32 magic
(0x00000803 for 3-D image tensors, 0x00000801 for 1-D label vectors),
one big-endian uint32 per dimension, then the unsigned-byte payload in
row-major order. Files ending in ``.gz`` are decompressed transparently.
Pixels are scaled to [0, 1] by /255 and images flattened to feature rows;
``save_mnist_idx`` inverts the scaling bit-exactly.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConsistencyError, DomainError, FormatError
from .numcore import RngStream

__all__ = [
    "BatchPlan",
    "Dataset",
    "batches",
    "load_mnist_idx",
    "save_mnist_idx",
    "split_dataset",
    "synthetic_blobs",
]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix with integer labels in [0, num_classes)."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int
    image_shape: Optional[tuple[int, int]] = None  # set by the IDX loader

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DomainError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError(
                f"have {self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.num_classes < 1:
            raise DomainError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.num_classes, self.image_shape)


def _open_maybe_gzip(path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_idx(path, expected_magic: int, what: str) -> tuple[tuple[int, ...], np.ndarray]:
    with _open_maybe_gzip(path, "rb") as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise FormatError(f"{path}: truncated header")
        (magic,) = struct.unpack(">I", head)
        if magic != expected_magic:
            raise FormatError(
                f"{path}: expected {what} magic 0x{expected_magic:08x}, observed 0x{magic:08x}"
            )
        ndim = magic & 0xFF
        raw_dims = fh.read(4 * ndim)
        if len(raw_dims) < 4 * ndim:
            raise FormatError(f"{path}: truncated dimension header")
        dims = struct.unpack(f">{ndim}I", raw_dims)
        payload = fh.read()
    expected = int(np.prod(dims)) if dims else 0
    if len(payload) != expected:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, header promises {expected}")
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an MNIST-style IDX image/label file pair."""
    img_dims, img_bytes = _read_idx(images_path, _IMAGE_MAGIC, "image")
    lab_dims, lab_bytes = _read_idx(labels_path, _LABEL_MAGIC, "label")
    n, rows, cols = img_dims
    if lab_dims[0] != n:
        raise ConsistencyError(f"{images_path} has {n} images but {labels_path} has {lab_dims[0]} labels")
    features = img_bytes.astype(np.float64).reshape(n, rows * cols) / 255.0
    return Dataset(features, lab_bytes.astype(np.int64), num_classes=10, image_shape=(rows, cols))


def save_mnist_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a Dataset back to IDX files; inverse of load_mnist_idx, bit-exact."""
    if dataset.image_shape is None:
        raise DomainError("dataset has no image_shape; cannot reconstruct IDX image dims")
    rows, cols = dataset.image_shape
    if rows * cols != dataset.dim:
        raise ConsistencyError(f"image_shape {dataset.image_shape} does not match dim {dataset.dim}")
    pixels = np.rint(dataset.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise DomainError("features do not rescale into byte range; not an image dataset")
    with _open_maybe_gzip(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGE_MAGIC, dataset.n, rows, cols))
        fh.write(pixels.astype(np.uint8).tobytes())
    with _open_maybe_gzip(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABEL_MAGIC, dataset.n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def synthetic_blobs(n: int, classes: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters at deterministic axis-aligned centers, labeled by cluster.

    Class c sits at distance 3*(1 + c//dim) along axis c%dim, so any two
    centers differ; spread -> 0 makes the classes linearly separable.
    """
    if classes < 2:
        raise DomainError(f"need at least 2 classes, got {classes}")
    if n < classes:
        raise DomainError(f"need n >= classes, got n={n} classes={classes}")
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    if spread < 0:
        raise DomainError(f"spread must be >= 0, got {spread}")
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    features = np.empty((n, dim))
    labels = np.empty(n, dtype=np.int64)
    root = RngStream(seed).split("blobs")
    row = 0
    for c in range(classes):
        center = np.zeros(dim)
        center[c % dim] = 3.0 * (1 + c // dim)
        pts = root.split(c).normal(counts[c], dim) * spread + center
        features[row : row + counts[c]] = pts
        labels[row : row + counts[c]] = c
        row += counts[c]
    return Dataset(features, labels, num_classes=classes)


def split_dataset(dataset: Dataset, holdout_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministically shuffle, then carve the held-out tail."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise DomainError(f"holdout_fraction must be in [0, 1), got {holdout_fraction}")
    perm = RngStream(seed).split("holdout-shuffle").permutation(dataset.n)
    n_hold = int(round(dataset.n * holdout_fraction))
    if n_hold == 0:
        return dataset.subset(perm), dataset.subset(perm[:0])
    return dataset.subset(perm[:-n_hold]), dataset.subset(perm[-n_hold:])


@dataclass(frozen=True)
class BatchPlan:
    """Shuffled mini-batch schedule, deterministic per (seed, epoch)."""

    batch_size: int
    seed: int
    epoch: int = 0


def batches(dataset: Dataset, plan: BatchPlan) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (features, labels) mini-batches covering the dataset exactly once.

    The permutation depends only on (plan.seed, plan.epoch); the final short
    batch is kept.
    """
    if plan.batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {plan.batch_size}")
    if plan.batch_size > dataset.n:
        raise DomainError(f"batch_size {plan.batch_size} exceeds dataset size {dataset.n}")
    perm = RngStream(plan.seed).split("batch-shuffle").split(plan.epoch).permutation(dataset.n)
    for start in range(0, dataset.n, plan.batch_size):
        idx = perm[start : start + plan.batch_size]
        yield dataset.features[idx], dataset.labels[idx]
