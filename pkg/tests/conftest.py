"""Shared test helpers: independent oracles, instance generators, data fixtures."""

from __future__ import annotations

import gzip
import math
import os
import struct
from pathlib import Path

import numpy as np

from fedsim import Batch, ModelSpec
from fedsim.model import _forward_pass

FD_STEP = 1e-5


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_diff(f, theta: np.ndarray, coord: int, h: float = FD_STEP) -> float:
    """Central difference of a scalar function along one coordinate."""
    up = theta.copy()
    up[coord] += h
    down = theta.copy()
    down[coord] -= h
    return (f(up) - f(down)) / (2.0 * h)


def naive_batch_loss(spec: ModelSpec, theta: np.ndarray, batch: Batch) -> float:
    """Pure-python per-sample forward pass; independent of the vectorized path."""
    weights = []
    offset = 0
    for fan_in, fan_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        w = [
            [float(theta[offset + i * fan_out + j]) for j in range(fan_out)]
            for i in range(fan_in)
        ]
        offset += fan_in * fan_out
        b = [float(theta[offset + j]) for j in range(fan_out)]
        offset += fan_out
        weights.append((w, b))
    total = 0.0
    for i in range(len(batch)):
        a = [float(v) for v in batch.inputs[i]]
        for l, (w, b) in enumerate(weights):
            z = [
                b[j] + sum(a[k] * w[k][j] for k in range(len(a)))
                for j in range(len(b))
            ]
            if l < len(weights) - 1:
                if spec.activation == "relu":
                    a = [max(v, 0.0) for v in z]
                else:
                    a = [math.tanh(v) for v in z]
            else:
                a = z
        m = max(a)
        lse = m + math.log(sum(math.exp(v - m) for v in a))
        total += lse - a[int(batch.labels[i])]
    return total / len(batch)


def random_instance(
    rng: np.random.Generator,
    activation: str | None = None,
    max_hidden_layers: int = 2,
    max_width: int = 8,
    batch_range: tuple[int, int] = (2, 8),
) -> tuple[ModelSpec, np.ndarray, Batch]:
    """Random small model, parameters and batch."""
    depth = int(rng.integers(0, max_hidden_layers + 1))
    sizes = (
        [int(rng.integers(2, max_width + 1))]
        + [int(rng.integers(2, max_width + 1)) for _ in range(depth)]
        + [int(rng.integers(2, 6))]
    )
    act = activation or ("relu" if rng.random() < 0.5 else "tanh")
    spec = ModelSpec(tuple(sizes), act)
    theta = rng.normal(0.0, 0.7, spec.param_count)
    n = int(rng.integers(*batch_range))
    batch = Batch(
        rng.normal(0.0, 1.0, (n, spec.input_dim)),
        rng.integers(0, spec.class_count, n),
    )
    return spec, theta, batch


def fd_safe(spec: ModelSpec, theta: np.ndarray, batch: Batch, margin: float = 1e-3) -> bool:
    """True when no relu pre-activation sits within margin of its kink.

    Keeps finite differencing away from the nondifferentiable points; tanh
    models are always safe.
    """
    if spec.activation != "relu":
        return True
    _, zs = _forward_pass(spec, theta, batch.inputs)
    return all(np.abs(z).min() > margin for z in zs[:-1]) if len(zs) > 1 else True


def fd_safe_instance(rng: np.random.Generator, **kwargs) -> tuple[ModelSpec, np.ndarray, Batch]:
    while True:
        spec, theta, batch = random_instance(rng, **kwargs)
        if fd_safe(spec, theta, batch):
            return spec, theta, batch


def idx_images_bytes(images: np.ndarray, magic: int = 0x00000803) -> bytes:
    """Serialize a (n, rows, cols) uint8 array in the IDX container layout."""
    n, rows, cols = images.shape
    return struct.pack(">iiii", magic, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray, magic: int = 0x00000801) -> bytes:
    return struct.pack(">ii", magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


def write_idx_pair(
    dir_path: Path,
    images: np.ndarray,
    labels: np.ndarray,
    stem: str = "train",
    compress: bool = False,
) -> tuple[Path, Path]:
    img_path = dir_path / f"{stem}-images-idx3-ubyte"
    lbl_path = dir_path / f"{stem}-labels-idx1-ubyte"
    img_data = idx_images_bytes(images)
    lbl_data = idx_labels_bytes(labels)
    if compress:
        img_path = img_path.with_suffix(".gz")
        lbl_path = lbl_path.with_suffix(".gz")
        img_data = gzip.compress(img_data)
        lbl_data = gzip.compress(lbl_data)
    img_path.write_bytes(img_data)
    lbl_path.write_bytes(lbl_data)
    return img_path, lbl_path


_MNIST_STEMS = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist() -> dict[str, str] | None:
    """Locate the standard MNIST IDX quartet under $FEDSIM_DATA_DIR or ./data."""
    candidates = []
    env = os.environ.get("FEDSIM_DATA_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data"))
    for base in candidates:
        found = {}
        for key, stem in _MNIST_STEMS.items():
            for name in (stem, stem + ".gz"):
                if (base / name).is_file():
                    found[key] = str(base / name)
                    break
        if len(found) == len(_MNIST_STEMS):
            return found
    return None
