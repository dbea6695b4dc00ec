"""Minimal MLP classifier over a flat parameter vector.

All parameters of the network live in a single 1-D float64 vector so that
federated algorithms can treat models as plain vectors. Layout per layer:
weight matrix (fan_in x fan_out, row-major) followed by the bias vector.
Forward/backward are exact and deterministic; no autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("relu", "tanh")

_EVAL_CHUNK = 4096


class ShapeError(ValueError):
    """Raised when an array dimension disagrees with the model spec."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: layer sizes and hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output entry")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes entries must be >= 1, got {sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; expected one of {_ACTIVATIONS}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        """Total number of parameters: sum of (fan_in + 1) * fan_out."""
        return sum(
            (fan_in + 1) * fan_out
            for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:])
        )


@dataclass
class Batch:
    """A minibatch: inputs (B x D) and integer class labels (B,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def layer_views(spec: ModelSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views per layer into the flat vector; no copies are made."""
    out = []
    offset = 0
    for fan_in, fan_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        w = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = theta[offset : offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def _check_theta(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != spec.param_count:
        raise ShapeError(
            f"parameter vector has length {theta.size}, model needs {spec.param_count}"
        )
    return theta


def _check_batch(spec: ModelSpec, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    inputs, labels = batch.inputs, batch.labels
    if inputs.ndim != 2:
        raise ShapeError(f"batch inputs must be 2-D, got shape {inputs.shape}")
    if inputs.shape[1] != spec.input_dim:
        raise ShapeError(
            f"batch input dim {inputs.shape[1]} != model input dim {spec.input_dim}"
        )
    if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch size {inputs.shape[0]}"
        )
    if inputs.shape[0] == 0:
        raise ShapeError("batch is empty")
    if labels.min() < 0 or labels.max() >= spec.class_count:
        raise ShapeError(
            f"labels must lie in [0, {spec.class_count}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return inputs, labels


def param_init(spec: ModelSpec, seed: int) -> np.ndarray:
    """Deterministic init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.param_count, dtype=np.float64)
    for w, _b in layer_views(spec, theta):
        bound = 1.0 / math.sqrt(w.shape[0])
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return theta


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Derivative w.r.t. the pre-activation; relu uses 0 at z == 0.
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_pass(
    spec: ModelSpec, theta: np.ndarray, inputs: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Returns (acts, zs): acts[l] feeds layer l (acts[0] = inputs), zs[l] is its pre-activation."""
    layers = layer_views(spec, theta)
    acts = [inputs]
    zs = []
    for l, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        zs.append(z)
        if l < len(layers) - 1:
            acts.append(_activate(spec.activation, z))
    return acts, zs


def logits_of(spec: ModelSpec, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Raw class scores for a 2-D input matrix."""
    theta = _check_theta(spec, theta)
    _, zs = _forward_pass(spec, theta, np.asarray(inputs, dtype=np.float64))
    return zs[-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec: ModelSpec, theta: np.ndarray, batch: Batch) -> tuple[np.ndarray, float]:
    """Logits (B x C) and mean cross-entropy loss over the batch.

    The loss is computed via a shifted log-sum-exp so it stays finite for any
    finite parameters and inputs.
    """
    theta = _check_theta(spec, theta)
    inputs, labels = _check_batch(spec, batch)
    _, zs = _forward_pass(spec, theta, inputs)
    logits = zs[-1]
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    return logits, loss


def backward(spec: ModelSpec, theta: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact gradient of forward()'s mean loss w.r.t. the flat parameter vector."""
    theta = _check_theta(spec, theta)
    inputs, labels = _check_batch(spec, batch)
    n = inputs.shape[0]
    acts, zs = _forward_pass(spec, theta, inputs)
    layers = layer_views(spec, theta)

    # dLoss/dlogits for the mean cross-entropy: (softmax - onehot) / n
    delta = _softmax(zs[-1])
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad = np.empty_like(theta)
    grad_layers = layer_views(spec, grad)
    for l in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[l]
        np.matmul(acts[l].T, delta, out=gw)
        gb[:] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ layers[l][0].T
            delta *= _activation_deriv(spec.activation, zs[l - 1], acts[l])
    return grad


def sgd_step(theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One plain SGD step: theta - lr * grad.

    lr = 0 is allowed (identity step); negative rates are rejected.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape:
        raise ShapeError(
            f"gradient length {grad.size} != parameter length {theta.size}"
        )
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    return theta - lr * grad


def evaluate(spec: ModelSpec, theta: np.ndarray, dataset) -> float:
    """Classification accuracy on a dataset-like object with .inputs and .labels.

    Argmax ties resolve to the lowest class index.
    """
    theta = _check_theta(spec, theta)
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("evaluate needs a nonempty dataset")
    if inputs.shape[1] != spec.input_dim:
        raise ShapeError(
            f"dataset input dim {inputs.shape[1]} != model input dim {spec.input_dim}"
        )
    hits = 0
    for start in range(0, n, _EVAL_CHUNK):
        chunk = inputs[start : start + _EVAL_CHUNK]
        _, zs = _forward_pass(spec, theta, chunk)
        hits += int((zs[-1].argmax(axis=1) == labels[start : start + _EVAL_CHUNK]).sum())
    return hits / n
