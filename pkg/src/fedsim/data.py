"""Dataset loading and partitioning.

Supports the big-endian IDX container format (optionally gzip-compressed),
synthetic Gaussian blob datasets for fast tests, and two ways of splitting a
dataset across nodes: a label-sorted block partition that produces sharply
non-iid shards, and a plain shuffled iid split.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised for malformed IDX files; the message names the offending file."""


@dataclass
class Dataset:
    """Immutable-by-convention sample matrix with integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.inputs.shape[0]} samples"
            )
        if len(self) < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.class_count)


@dataclass(frozen=True)
class PartitionSpec:
    """Non-iid block partition layout: n_nodes * blocks_per_node label-sorted blocks."""

    n_nodes: int
    blocks_per_node: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.blocks_per_node < 1:
            raise ValueError(f"blocks_per_node must be >= 1, got {self.blocks_per_node}")


def _read_idx(path: str | Path, expected_magic: int, ndim: int) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(f"{path}: bad gzip stream ({exc})") from exc
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = struct.unpack_from(">i", raw, 0)[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    dims = struct.unpack_from(f">{ndim}i", raw, 4)
    count = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if payload.size < count:
        raise IdxFormatError(
            f"{path}: truncated payload, header promises {count} bytes but "
            f"{payload.size} remain"
        )
    return payload[:count].reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an images/labels IDX pair; pixels are scaled to [0, 1] by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, ndim=3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    class_count = int(labels.max()) + 1
    return Dataset(inputs, labels.astype(np.int64), class_count)


def synth_blobs(
    classes: int,
    per_class: int,
    dim: int,
    seed: int,
    *,
    spread: float = 4.0,
    noise: float = 1.0,
) -> Dataset:
    """Gaussian clusters, one per class, centered on scaled basis vectors.

    Linearly separable at the default spread/noise, so a linear softmax model
    can reach high accuracy; useful as a fast stand-in for image data.
    """
    if classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("classes, per_class and dim must all be >= 1")
    if dim < classes:
        raise ValueError(f"dim must be >= classes for distinct cluster means ({dim} < {classes})")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = spread
    inputs = means[labels] + noise * rng.standard_normal((classes * per_class, dim))
    return Dataset(inputs, labels, classes)


def partition_noniid(ds: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split into n_nodes shards of blocks_per_node homogeneous-label blocks.

    Sample indices are stably sorted by label and cut into
    K = n_nodes * blocks_per_node equal contiguous blocks (the remainder after
    floor division is discarded). Blocks are then permuted with the seeded RNG
    and dealt out consecutively, blocks_per_node per node.
    """
    n = len(ds)
    k = spec.n_nodes * spec.blocks_per_node
    block_size = n // k
    if block_size < 1:
        raise ValueError(
            f"dataset of {n} samples cannot fill {k} nonempty blocks"
        )
    order = np.argsort(ds.labels, kind="stable")
    blocks = order[: k * block_size].reshape(k, block_size)
    perm = np.random.default_rng(spec.seed).permutation(k)
    shards = []
    for node in range(spec.n_nodes):
        chosen = perm[node * spec.blocks_per_node : (node + 1) * spec.blocks_per_node]
        shards.append(ds.subset(np.concatenate([blocks[b] for b in chosen])))
    return shards


def partition_iid(ds: Dataset, n_nodes: int, seed: int) -> list[Dataset]:
    """Seeded shuffle followed by an equal split; the remainder is discarded."""
    n = len(ds)
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    if n_nodes > n:
        raise ValueError(f"cannot split {n} samples across {n_nodes} nodes")
    shard_size = n // n_nodes
    perm = np.random.default_rng(seed).permutation(n)
    return [
        ds.subset(perm[node * shard_size : (node + 1) * shard_size])
        for node in range(n_nodes)
    ]
