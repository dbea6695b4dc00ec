"""Local training objectives for federated optimization.

Three variants of the per-node loss:

* FedAvg   - plain cross-entropy.
* FedProx  - adds the isotropic proximal penalty (mu/2) * ||theta - anchor||^2.
* FedCurv  - adds an anisotropic quadratic pulling each coordinate toward the
  other nodes' last parameters, weighted by their Fisher diagonals. The
  penalty is evaluated in its rearranged form from the exclusion sums
  u_excl = sum_{j != s} I_j and v_excl = sum_{j != s} I_j * theta_j, with the
  theta-independent constant dropped (it does not affect gradients).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import Batch, ModelSpec, ShapeError, backward, forward

# Negative exclusion-sum coordinates beyond this signal corrupted aggregates;
# anything smaller in magnitude is floating-point cancellation and clips to 0.
_NEG_TOL = 1e-9


class Algorithm(Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDCURV = "fedcurv"

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown algorithm {name!r}; expected one of: {valid}") from None

    @property
    def label(self) -> str:
        return {"fedavg": "FedAvg", "fedprox": "FedProx", "fedcurv": "FedCurv"}[self.value]


@dataclass
class HyperParams:
    """Shared training hyperparameters for one run.

    participation is the fraction of nodes active per round; only full
    participation (1.0) is supported and anything else is a config error.
    """

    learning_rate: float = 0.01
    batch_size: int = 32
    local_epochs: int = 1
    fedcurv_lambda: float = 0.0
    fedprox_mu: float = 0.0
    participation: float = 1.0
    fisher_batch_limit: int | None = None

    def __post_init__(self):
        if self.participation != 1.0:
            raise ValueError(
                f"participation must be 1.0 (node subsampling unsupported), got {self.participation}"
            )
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.fedcurv_lambda < 0:
            raise ValueError(f"lambda must be >= 0, got {self.fedcurv_lambda}")
        if self.fedprox_mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.fedprox_mu}")
        if self.fisher_batch_limit is not None and self.fisher_batch_limit < 1:
            raise ValueError(
                f"fisher_batch_limit must be >= 1 or unset, got {self.fisher_batch_limit}"
            )


@dataclass
class CurvAnchor:
    """Exclusion sums a node needs to evaluate the FedCurv penalty."""

    u_excl: np.ndarray
    v_excl: np.ndarray

    def __post_init__(self):
        self.u_excl = np.asarray(self.u_excl, dtype=np.float64)
        self.v_excl = np.asarray(self.v_excl, dtype=np.float64)
        if self.u_excl.shape != self.v_excl.shape:
            raise ShapeError(
                f"u_excl length {self.u_excl.size} != v_excl length {self.v_excl.size}"
            )


def fedprox_penalty(
    theta: np.ndarray, theta_anchor: np.ndarray, mu: float
) -> tuple[float, np.ndarray]:
    """Proximal penalty (mu/2) * ||theta - anchor||^2 and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_anchor = np.asarray(theta_anchor, dtype=np.float64)
    if theta.shape != theta_anchor.shape:
        raise ShapeError(
            f"anchor length {theta_anchor.size} != parameter length {theta.size}"
        )
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    diff = theta - theta_anchor
    value = 0.5 * mu * float(diff @ diff)
    return value, mu * diff


def fedcurv_penalty(
    theta: np.ndarray, anchor: CurvAnchor, lam: float
) -> tuple[float, np.ndarray]:
    """Fisher-weighted penalty lam * (theta^T (u*theta) - 2 theta^T v), constant dropped.

    Gradient is 2*lam*(u*theta - v). Convex in theta since u_excl >= 0.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != anchor.u_excl.shape:
        raise ShapeError(
            f"anchor length {anchor.u_excl.size} != parameter length {theta.size}"
        )
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    u_theta = anchor.u_excl * theta
    value = lam * float(theta @ u_theta - 2.0 * (theta @ anchor.v_excl))
    grad = (2.0 * lam) * (u_theta - anchor.v_excl)
    return value, grad


def build_curv_anchor(
    u_total: np.ndarray,
    v_total: np.ndarray,
    own_fisher: np.ndarray,
    own_fisher_theta: np.ndarray,
) -> CurvAnchor:
    """Exclusion sums by subtracting the node's own terms from the global sums."""
    u_total = np.asarray(u_total, dtype=np.float64)
    v_total = np.asarray(v_total, dtype=np.float64)
    own_fisher = np.asarray(own_fisher, dtype=np.float64)
    own_fisher_theta = np.asarray(own_fisher_theta, dtype=np.float64)
    for name, vec in (
        ("v_total", v_total),
        ("own_fisher", own_fisher),
        ("own_fisher_theta", own_fisher_theta),
    ):
        if vec.shape != u_total.shape:
            raise ShapeError(f"{name} length {vec.size} != u_total length {u_total.size}")
    u_excl = u_total - own_fisher
    worst = u_excl.min() if u_excl.size else 0.0
    if worst < -_NEG_TOL:
        raise ValueError(
            f"corrupted aggregates: exclusion sum has coordinate {worst:.3e} < -{_NEG_TOL}"
        )
    np.maximum(u_excl, 0.0, out=u_excl)
    return CurvAnchor(u_excl=u_excl, v_excl=v_total - own_fisher_theta)


def _check_context(algo: Algorithm, prox_anchor, curv_anchor) -> None:
    if algo is Algorithm.FEDPROX and prox_anchor is None:
        raise ValueError("FedProx needs prox_anchor (the round's starting parameters)")
    if algo is Algorithm.FEDCURV and curv_anchor is None:
        raise ValueError("FedCurv needs curv_anchor (the other nodes' exclusion sums)")


def local_objective_grad(
    algo: Algorithm,
    spec: ModelSpec,
    theta: np.ndarray,
    batch: Batch,
    hp: HyperParams,
    *,
    prox_anchor: np.ndarray | None = None,
    curv_anchor: CurvAnchor | None = None,
) -> np.ndarray:
    """Gradient of the selected local objective on one minibatch.

    Zero-stiffness penalties short-circuit so that FedProx(mu=0) and
    FedCurv(lambda=0) gradients are bit-identical to FedAvg's.
    """
    _check_context(algo, prox_anchor, curv_anchor)
    grad = backward(spec, theta, batch)
    if algo is Algorithm.FEDPROX and hp.fedprox_mu > 0.0:
        _, pg = fedprox_penalty(theta, prox_anchor, hp.fedprox_mu)
        grad = grad + pg
    elif algo is Algorithm.FEDCURV and hp.fedcurv_lambda > 0.0:
        _, pg = fedcurv_penalty(theta, curv_anchor, hp.fedcurv_lambda)
        grad = grad + pg
    return grad


def local_objective_loss(
    algo: Algorithm,
    spec: ModelSpec,
    theta: np.ndarray,
    batch: Batch,
    hp: HyperParams,
    *,
    prox_anchor: np.ndarray | None = None,
    curv_anchor: CurvAnchor | None = None,
) -> float:
    """Value of the selected local objective (penalty constant omitted)."""
    _check_context(algo, prox_anchor, curv_anchor)
    _, loss = forward(spec, theta, batch)
    if algo is Algorithm.FEDPROX and hp.fedprox_mu > 0.0:
        loss += fedprox_penalty(theta, prox_anchor, hp.fedprox_mu)[0]
    elif algo is Algorithm.FEDCURV and hp.fedcurv_lambda > 0.0:
        loss += fedcurv_penalty(theta, curv_anchor, hp.fedcurv_lambda)[0]
    return loss
