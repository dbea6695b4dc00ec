"""Diagonal of the empirical Fisher information matrix.

Estimated as the mean over samples of the squared per-sample gradient of the
negative log-likelihood at the observed label. Per-sample gradients are exact:
for an MLP the squared per-sample weight gradient factors into
(activation^2)^T @ (delta^2), so no per-sample loop is needed.
"""

from __future__ import annotations

import numpy as np

from .model import (
    ModelSpec,
    ShapeError,
    _activation_deriv,
    _check_theta,
    _forward_pass,
    _softmax,
    layer_views,
)

_CHUNK = 512


def estimate_fisher_diag(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset,
    batch_limit: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Empirical Fisher diagonal of the model at theta over a dataset.

    With batch_limit set, a uniform subsample of that size (drawn with the
    given seed, without replacement) is used instead of the full dataset.
    Accumulation follows dataset order in fixed-size chunks, so the result is
    deterministic for a given call.
    """
    theta = _check_theta(spec, theta)
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("estimate_fisher_diag needs a nonempty dataset")
    if batch_limit is not None:
        if batch_limit < 1:
            raise ValueError(f"batch_limit must be >= 1, got {batch_limit}")
        if batch_limit < n:
            rng = np.random.default_rng(seed)
            keep = np.sort(rng.choice(n, size=batch_limit, replace=False))
            inputs, labels = inputs[keep], labels[keep]
            n = batch_limit

    layers = layer_views(spec, theta)
    sq_sum = np.zeros_like(theta)
    sq_layers = layer_views(spec, sq_sum)
    for start in range(0, n, _CHUNK):
        x = inputs[start : start + _CHUNK]
        y = labels[start : start + _CHUNK]
        acts, zs = _forward_pass(spec, theta, x)
        # per-sample NLL gradient at the logits (no batch mean)
        delta = _softmax(zs[-1])
        delta[np.arange(len(y)), y] -= 1.0
        for l in range(len(layers) - 1, -1, -1):
            sw, sb = sq_layers[l]
            d2 = delta * delta
            sw += (acts[l] * acts[l]).T @ d2
            sb += d2.sum(axis=0)
            if l > 0:
                delta = delta @ layers[l][0].T
                delta *= _activation_deriv(spec.activation, zs[l - 1], acts[l])
    return sq_sum / n


def fisher_weighted_params(fisher: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Elementwise product fisher * theta (the second vector a node transmits)."""
    fisher = np.asarray(fisher, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if fisher.shape != theta.shape:
        raise ShapeError(
            f"fisher length {fisher.size} != parameter length {theta.size}"
        )
    return fisher * theta
