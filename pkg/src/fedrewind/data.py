"""Dataset ingestion and non-IID partitioning.

Supports the big-endian IDX image/label format (plain or gzipped), a
synthetic Gaussian-blob generator for fast tests, and Dirichlet
partitioning of a dataset into per-node shards with stratified
train/test splits.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Batch
from .seeding import generator

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix scaled to [0,1] plus integer labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels must have equal count")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if labels.size == 0:
            raise ValueError("dataset is empty")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        present = np.bincount(labels, minlength=self.num_classes) > 0
        if not present.all():
            missing = int(np.flatnonzero(~present)[0])
            raise ValueError(f"class {missing} has no samples")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Shard:
    """One node's immutable train/test index split into a Dataset."""

    node_id: int
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        train = np.array(self.train, dtype=np.int64).ravel()
        test = np.array(self.test, dtype=np.int64).ravel()
        if train.size == 0:
            raise ValueError("shard train split is empty")
        if test.size == 0:
            raise ValueError("shard test split is empty")
        if np.intersect1d(train, test).size:
            raise ValueError("train and test splits overlap")
        train.setflags(write=False)
        test.setflags(write=False)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)

    def train_batch(self, data: Dataset) -> Batch:
        return Batch(data.features[self.train], data.labels[self.train])

    def test_batch(self, data: Dataset) -> Batch:
        return Batch(data.features[self.test], data.labels[self.test])


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across nodes.

    alpha is the Dirichlet concentration: lower means more skewed
    per-node class distributions.
    """

    num_nodes: int
    alpha: float
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


# ---------------------------------------------------------------------------
# IDX ingestion


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, n_dims: int):
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4 * (1 + n_dims))
        if len(header) < 4 * (1 + n_dims):
            raise ValueError(f"truncated IDX header in {path}")
        fields = struct.unpack(f">{1 + n_dims}I", header)
        magic, dims = fields[0], fields[1:]
        if magic != expected_magic:
            raise ValueError(
                f"IDX magic mismatch in {path}: "
                f"got 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
        count = int(np.prod(dims))
        payload = fh.read(count)
        if len(payload) < count:
            raise ValueError(f"truncated IDX payload in {path}")
        return np.frombuffer(payload, dtype=np.uint8), dims


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a flat [0,1] dataset."""
    pixels, (n_img, rows, cols) = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels, (n_lab,) = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if n_img != n_lab:
        raise ValueError(
            f"image count {n_img} does not match label count {n_lab}"
        )
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes=10, name="mnist")


_MNIST_BASENAMES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def find_mnist_pair(directory) -> tuple[Path, Path]:
    """Locate the training image/label files (plain or .gz) in a directory."""
    directory = Path(directory)
    paths = []
    for base in _MNIST_BASENAMES:
        plain = directory / base
        gz = directory / (base + ".gz")
        if plain.exists():
            paths.append(plain)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(
                f"{base}[.gz] not found in {directory}"
            )
    return paths[0], paths[1]


def load_mnist_dir(directory) -> Dataset:
    images, labels = find_mnist_pair(directory)
    return load_mnist_idx(images, labels)


# ---------------------------------------------------------------------------
# synthetic blobs


def _blob_means(num_classes: int, dims: int) -> np.ndarray:
    """Deterministic, distinct class means inside [0,1]^dims.

    Means sit on a circle in the first two dimensions (evenly spaced in a
    single dimension when dims == 1); remaining coordinates are 0.5.
    Classes stay separable as long as spread is small relative to
    0.7*sin(pi/num_classes).
    """
    means = np.full((num_classes, dims), 0.5)
    if dims == 1:
        means[:, 0] = np.linspace(0.1, 0.9, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = 0.5 + 0.35 * np.cos(angles)
        means[:, 1] = 0.5 + 0.35 * np.sin(angles)
    return means


def make_blobs(
    num_classes: int,
    dims: int,
    samples_per_class: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian blobs around deterministically placed class means."""
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if dims < 1 or samples_per_class < 1:
        raise ValueError("dims and samples_per_class must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = generator(seed)
    means = _blob_means(num_classes, dims)
    features = np.empty((num_classes * samples_per_class, dims))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        lo = c * samples_per_class
        hi = lo + samples_per_class
        noise = rng.standard_normal((samples_per_class, dims)) * spread
        features[lo:hi] = means[c] + noise
        labels[lo:hi] = c
    np.clip(features, 0.0, 1.0, out=features)
    return Dataset(features, labels, num_classes=num_classes, name="blobs")


# ---------------------------------------------------------------------------
# Dirichlet partitioning


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas summing exactly to total, by largest remainder."""
    raw = proportions * total
    quotas = np.floor(raw).astype(np.int64)
    leftover = total - int(quotas.sum())
    if leftover > 0:
        frac = raw - quotas
        # ties broken toward lower index via stable sort on -frac
        order = np.argsort(-frac, kind="stable")
        quotas[order[:leftover]] += 1
    return quotas


def _split_train_test(indices, labels, test_fraction, rng):
    """Stratified per-class split; returns (train, test) index arrays."""
    train_parts, test_parts = [], []
    node_labels = labels[indices]
    for c in np.unique(node_labels):
        members = indices[node_labels == c]
        rng.shuffle(members)
        k_test = int(np.floor(test_fraction * members.size + 0.5))
        k_test = min(k_test, members.size)
        test_parts.append(members[members.size - k_test :])
        train_parts.append(members[: members.size - k_test])
    train = np.sort(np.concatenate(train_parts)) if train_parts else np.empty(0, np.int64)
    test = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, np.int64)
    return train, test


MAX_PARTITION_REDRAWS = 100


def dirichlet_partition(data: Dataset, spec: PartitionSpec) -> list[Shard]:
    """Split a dataset into per-node shards with Dirichlet class skew.

    For every class, node proportions are drawn from
    Dirichlet(alpha * ones(N)) and that class's samples are assigned by
    largest-remainder quota. Each node's indices are then split into
    train/test, stratified per class. The partition is exact: every
    dataset index lands in exactly one shard. If any node ends up with an
    empty train or test split, the whole draw is redone with the seed
    incremented, up to MAX_PARTITION_REDRAWS times.
    """
    n_nodes = spec.num_nodes
    if len(data) < 2 * n_nodes:
        raise ValueError(
            f"dataset of {len(data)} samples is too small for "
            f"{n_nodes} nodes (each needs a train and a test sample)"
        )
    for attempt in range(MAX_PARTITION_REDRAWS):
        rng = generator(spec.seed + attempt)
        bins: list[list[np.ndarray]] = [[] for _ in range(n_nodes)]
        for c in range(data.num_classes):
            class_idx = np.flatnonzero(data.labels == c)
            rng.shuffle(class_idx)
            proportions = rng.dirichlet(np.full(n_nodes, spec.alpha))
            quotas = _largest_remainder(proportions, class_idx.size)
            offset = 0
            for node, quota in enumerate(quotas):
                if quota:
                    bins[node].append(class_idx[offset : offset + quota])
                offset += quota
        shards = []
        for node in range(n_nodes):
            if not bins[node]:
                shards = None
                break
            indices = np.concatenate(bins[node])
            train, test = _split_train_test(
                indices, data.labels, spec.test_fraction, rng
            )
            if train.size == 0 or test.size == 0:
                shards = None
                break
            shards.append(Shard(node_id=node, train=train, test=test))
        if shards is not None:
            return shards
    raise ValueError(
        f"no valid partition after {MAX_PARTITION_REDRAWS} redraws: "
        f"dataset too small for {n_nodes} nodes at alpha={spec.alpha}"
    )


def joint_view(shards: Sequence[Shard]) -> Shard:
    """Consolidate all shards into one (union of trains, union of tests)."""
    train = np.sort(np.concatenate([s.train for s in shards]))
    test = np.sort(np.concatenate([s.test for s in shards]))
    return Shard(node_id=0, train=train, test=test)


# ---------------------------------------------------------------------------
# utilities


def subsample(data: Dataset, size: int, seed: int) -> Dataset:
    """Class-stratified subset of `size` samples, deterministic in seed."""
    if size < data.num_classes:
        raise ValueError("subset must contain at least one sample per class")
    if size >= len(data):
        return data
    counts = np.bincount(data.labels, minlength=data.num_classes)
    quotas = _largest_remainder(counts / len(data), size)
    # every class must survive the cap; donate from the largest quota
    while (quotas == 0).any():
        empty = int(np.flatnonzero(quotas == 0)[0])
        quotas[int(np.argmax(quotas))] -= 1
        quotas[empty] += 1
    rng = generator(seed)
    keep = []
    for c in range(data.num_classes):
        class_idx = np.flatnonzero(data.labels == c)
        rng.shuffle(class_idx)
        keep.append(class_idx[: quotas[c]])
    keep = np.sort(np.concatenate(keep))
    return Dataset(
        data.features[keep], data.labels[keep], data.num_classes, data.name
    )


def class_counts(data: Dataset, indices: np.ndarray) -> np.ndarray:
    """Per-class sample counts among the given dataset indices."""
    return np.bincount(data.labels[indices], minlength=data.num_classes)


def label_entropy(data: Dataset, indices: np.ndarray) -> float:
    """Shannon entropy (nats) of the label distribution on the indices."""
    counts = class_counts(data, indices)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def save_csv(data: Dataset, path) -> None:
    """Write the dataset as CSV with header f0..f{d-1},label."""
    header = ",".join(f"f{i}" for i in range(data.dim)) + ",label"
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row, label in zip(data.features, data.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
