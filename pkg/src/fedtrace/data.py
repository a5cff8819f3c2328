"""Datasets and their distribution across simulated clients.

Ships a seeded synthetic generator (Gaussian class blobs) as the default
zero-download data source, an importer for IDX-format image/label files,
disjoint IID / quantity-imbalanced Non-IID partitioning, and label-noise
fault injection.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .seeding import derive_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Flat float32 inputs with integer class labels."""

    inputs: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a (n, d) matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must align with inputs")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.num_classes)


def synthetic_blobs(
    num_classes: int,
    dim: int,
    num_examples: int,
    seed: int,
    mean_scale: float = 1.0,
    spread: float = 0.45,
) -> LabeledDataset:
    """Seeded Gaussian class blobs with a near-balanced label distribution.

    Class means ~ N(0, mean_scale^2 I); samples = mean + N(0, spread^2 I).
    Labels are assigned round-robin then shuffled, so counts per class
    differ by at most one.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_examples < 1:
        raise ValueError("need at least 1 example")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, size=(num_classes, dim))
    labels = np.arange(num_examples, dtype=np.int64) % num_classes
    rng.shuffle(labels)
    inputs = means[labels] + rng.normal(0.0, spread, size=(num_examples, dim))
    return LabeledDataset(inputs.astype(np.float32), labels, num_classes)


def _open_maybe_gzip(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """Read an IDX image/label file pair (the MNIST-family binary format).

    Images: big-endian magic 0x00000803, then count and per-axis dims,
    then unsigned bytes; scaled to [0, 1] float32 and flattened.
    Labels: magic 0x00000801 followed by unsigned byte labels.
    """
    with _open_maybe_gzip(Path(images_path)) as fh:
        magic, count = struct.unpack(">II", fh.read(8))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"bad images magic {magic:#010x}")
        rows, cols = struct.unpack(">II", fh.read(8))
        raw = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
    images = raw.reshape(count, rows * cols).astype(np.float32) / np.float32(255.0)

    with _open_maybe_gzip(Path(labels_path)) as fh:
        magic, label_count = struct.unpack(">II", fh.read(8))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"bad labels magic {magic:#010x}")
        labels = np.frombuffer(fh.read(label_count), dtype=np.uint8).astype(np.int64)
    if label_count != count:
        raise ValueError(f"{count} images but {label_count} labels")
    return LabeledDataset(images, labels, int(labels.max()) + 1 if label_count else 1)


class PartitionMode(str, Enum):
    IID = "iid"
    NONIID_QUANTITY = "noniid"


@dataclass(frozen=True)
class PartitionPlan:
    mode: PartitionMode
    num_clients: int
    seed: int
    min_fraction: float = 0.3  # Non-IID only: shard size >= min_fraction * (n / clients)

    def __post_init__(self):
        if self.num_clients < 2:
            raise ValueError("need at least 2 clients")
        if not (0.0 < self.min_fraction <= 1.0):
            raise ValueError("min_fraction must be in (0, 1]")


def partition_indices(n: int, plan: PartitionPlan) -> list[np.ndarray]:
    """Disjoint index shards covering range(n), deterministic per seed."""
    if n < plan.num_clients:
        raise ValueError(f"dataset of {n} examples cannot cover {plan.num_clients} clients")
    rng = np.random.default_rng(plan.seed)
    order = rng.permutation(n)
    k = plan.num_clients
    if plan.mode == PartitionMode.IID:
        return [np.sort(part) for part in np.array_split(order, k)]

    floor_size = int(np.ceil(plan.min_fraction * n / k))
    if floor_size * k > n:
        raise ValueError(
            f"min_fraction {plan.min_fraction} needs {floor_size} examples per "
            f"shard, but {n} examples cannot cover {k} clients"
        )
    slack = n - floor_size * k
    props = rng.dirichlet(np.ones(k))
    extra = np.floor(props * slack).astype(np.int64)
    short = slack - int(extra.sum())
    if short:
        # hand out the rounding remainder to the largest proportions
        for pos in np.argsort(-props)[:short]:
            extra[pos] += 1
    sizes = floor_size + extra
    if slack and len(set(sizes.tolist())) == 1:
        # quantity imbalance must actually be imbalanced; shift one example
        sizes[0] += 1
        sizes[-1] -= 1
    shards = []
    offset = 0
    for size in sizes:
        shards.append(np.sort(order[offset : offset + size]))
        offset += size
    return shards


def partition(dataset: LabeledDataset, plan: PartitionPlan) -> list[LabeledDataset]:
    return [dataset.subset(idx) for idx in partition_indices(len(dataset), plan)]


def inject_label_noise(shard: LabeledDataset, noise_rate: float, seed: int) -> LabeledDataset:
    """Replace round(noise_rate * n) labels, chosen without replacement, with
    a uniform draw over the *other* classes. Inputs are untouched."""
    if not (0.0 <= noise_rate <= 1.0):
        raise ValueError("noise_rate must be in [0, 1]")
    if shard.num_classes < 2:
        raise ValueError("label noise needs at least 2 classes")
    n = len(shard)
    count = int(np.floor(noise_rate * n + 0.5))  # half-up, so rate 0.5 on 10 flips 5
    labels = shard.labels.copy()
    if count:
        rng = np.random.default_rng(seed)
        victims = rng.choice(n, size=count, replace=False)
        draws = rng.integers(0, shard.num_classes - 1, size=count)
        originals = labels[victims]
        labels[victims] = draws + (draws >= originals)
    return LabeledDataset(shard.inputs, labels, shard.num_classes)


def noisy_shards(
    shards: list[LabeledDataset],
    faulty_ids: frozenset[int],
    noise_rate: float,
    seed: int,
) -> list[LabeledDataset]:
    """Apply label noise to the shards of the designated faulty clients."""
    out = []
    for cid, shard in enumerate(shards):
        if cid in faulty_ids and noise_rate > 0:
            out.append(inject_label_noise(shard, noise_rate, derive_seed(seed, "noise", cid)))
        else:
            out.append(shard)
    return out
