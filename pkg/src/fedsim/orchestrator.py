"""Synchronous federated round loop.

Each round: broadcast the aggregates, run E local epochs on every node,
collect (theta, fisher, fisher*theta), aggregate, and account every
transmitted scalar in a bandwidth ledger. The server keeps only aggregates
(mean parameters and the two Fisher sums), never per-node state.

Fisher vectors flow over the wire only when the FedCurv penalty is active
(lambda > 0); with lambda = 0 the protocol, and therefore the ledger, is
identical to FedAvg's.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import TYPE_CHECKING

import numpy as np

from .data import Dataset
from .fisher import estimate_fisher_diag, fisher_weighted_params
from .model import Batch, ModelSpec, ShapeError, evaluate, forward, param_init, sgd_step
from .objectives import (
    Algorithm,
    HyperParams,
    build_curv_anchor,
    local_objective_grad,
    local_objective_loss,
)
from .results import RunResult

if TYPE_CHECKING:
    from .config import RunConfig


@dataclass
class ServerState:
    """Central aggregates only: round index, mean parameters, Fisher sums."""

    round: int
    theta_mean: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def initial(cls, theta0: np.ndarray) -> "ServerState":
        return cls(
            round=0,
            theta_mean=np.asarray(theta0, dtype=np.float64),
            u=np.zeros_like(theta0),
            v=np.zeros_like(theta0),
        )


@dataclass
class NodeState:
    """One simulated node: its shard and what it last transmitted."""

    node_id: int
    shard: Dataset
    theta_last: np.ndarray
    fisher_last: np.ndarray
    fisher_theta_last: np.ndarray


@dataclass(frozen=True)
class SparsityConfig:
    """Top-q sparsification of Fisher uploads: keep a fraction q of coordinates."""

    q: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    node_id: int
    direction: str  # "up" or "down"
    value_elems: int
    index_elems: int = 0


class BandwidthLedger:
    """Per-round, per-node, per-direction counts of transmitted scalars.

    Vector payloads count as value elements; coordinate indices of sparsified
    uploads are tracked separately as index elements.
    """

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def record(
        self, round_index: int, node_id: int, direction: str, value_elems: int, index_elems: int = 0
    ) -> None:
        if direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
        self.entries.append(
            LedgerEntry(round_index, node_id, direction, value_elems, index_elems)
        )

    def total(self, direction: str) -> int:
        """Cumulative transmitted elements (values + indices) in one direction."""
        return sum(
            e.value_elems + e.index_elems for e in self.entries if e.direction == direction
        )

    def node_round(self, round_index: int, node_id: int, direction: str) -> tuple[int, int]:
        """(value_elems, index_elems) one node moved in one direction in one round."""
        value = index = 0
        for e in self.entries:
            if e.round == round_index and e.node_id == node_id and e.direction == direction:
                value += e.value_elems
                index += e.index_elems
        return value, index

    def to_records(self) -> list[dict]:
        return [
            {
                "round": e.round,
                "node": e.node_id,
                "dir": e.direction,
                "value_elems": e.value_elems,
                "index_elems": e.index_elems,
            }
            for e in self.entries
        ]


def round_seed_for(global_seed: int, round_index: int) -> int:
    """Stable per-round seed derived from the global seed."""
    ss = np.random.SeedSequence((global_seed, round_index))
    return int(ss.generate_state(1, np.uint64)[0])


def run_local_round(
    node: NodeState,
    algo: Algorithm,
    spec: ModelSpec,
    theta_start: np.ndarray,
    hp: HyperParams,
    round_seed: int,
    *,
    prox_anchor: np.ndarray | None = None,
    curv_anchor=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """E local epochs of minibatch SGD from theta_start, then a fresh Fisher estimate.

    Every epoch reshuffles the shard with an RNG seeded by round_seed XOR
    node_id, so the trajectory is a pure function of the arguments.
    """
    shard = node.shard
    n = len(shard)
    if n == 0:
        raise ValueError(f"node {node.node_id} has an empty shard")
    rng = np.random.default_rng(round_seed ^ node.node_id)
    theta = np.asarray(theta_start, dtype=np.float64)
    for _ in range(hp.local_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            sel = perm[start : start + hp.batch_size]
            batch = Batch(shard.inputs[sel], shard.labels[sel])
            grad = local_objective_grad(
                algo, spec, theta, batch, hp,
                prox_anchor=prox_anchor, curv_anchor=curv_anchor,
            )
            theta = sgd_step(theta, grad, hp.learning_rate)
    fisher = estimate_fisher_diag(
        spec, theta, shard, batch_limit=hp.fisher_batch_limit, seed=round_seed ^ node.node_id
    )
    return theta, fisher, fisher_weighted_params(fisher, theta)


def aggregate(
    results: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unweighted mean of parameters and sums of Fisher terms, in list order.

    The caller supplies results in ascending node-id order; summation follows
    that order so the outcome is independent of worker parallelism.
    """
    if not results:
        raise ValueError("aggregate needs at least one node result")
    p = np.asarray(results[0][0]).size
    theta_sum = np.zeros(p)
    u = np.zeros(p)
    v = np.zeros(p)
    for j, (theta, fisher, fisher_theta) in enumerate(results):
        for name, vec in (("theta", theta), ("fisher", fisher), ("fisher_theta", fisher_theta)):
            if np.asarray(vec).size != p:
                raise ShapeError(
                    f"node result {j}: {name} length {np.asarray(vec).size} != {p}"
                )
        theta_sum += theta
        u += fisher
        v += fisher_theta
    return theta_sum / len(results), u, v


def sparsify_topq(
    fisher: np.ndarray, fisher_theta: np.ndarray, cfg: SparsityConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep the ceil(q*P) coordinates with the largest Fisher values.

    Ties resolve to the lower index. Returns (indices ascending, fisher values,
    fisher*theta values); coordinates not listed count as zero downstream.
    """
    fisher = np.asarray(fisher, dtype=np.float64)
    fisher_theta = np.asarray(fisher_theta, dtype=np.float64)
    if fisher.shape != fisher_theta.shape:
        raise ShapeError(
            f"fisher length {fisher.size} != fisher_theta length {fisher_theta.size}"
        )
    p = fisher.size
    k = min(p, max(1, math.ceil(cfg.q * p)))
    order = np.argsort(-fisher, kind="stable")
    idx = np.sort(order[:k])
    return idx, fisher[idx], fisher_theta[idx]


def run_round(
    server: ServerState,
    nodes: list[NodeState],
    algo: Algorithm,
    spec: ModelSpec,
    hp: HyperParams,
    *,
    test_set: Dataset,
    round_seed: int,
    ledger: BandwidthLedger,
    sparsity: SparsityConfig | None = None,
    threads: int = 1,
) -> tuple[ServerState, dict]:
    """One synchronous round: broadcast, local training, upload, aggregate, evaluate.

    Mutates the node states (their last-transmitted vectors) and the ledger;
    returns the next server state and the round's metrics row.
    """
    p = spec.param_count
    rnd = server.round
    fisher_flow = algo is Algorithm.FEDCURV and hp.fedcurv_lambda > 0.0

    down_elems = 3 * p if fisher_flow else p
    for node in nodes:
        ledger.record(rnd, node.node_id, "down", down_elems)

    def local(node: NodeState):
        prox_anchor = server.theta_mean if algo is Algorithm.FEDPROX else None
        curv_anchor = None
        if algo is Algorithm.FEDCURV:
            curv_anchor = build_curv_anchor(
                server.u, server.v, node.fisher_last, node.fisher_theta_last
            )
        theta, fisher, fisher_theta = run_local_round(
            node, algo, spec, server.theta_mean, hp, round_seed,
            prox_anchor=prox_anchor, curv_anchor=curv_anchor,
        )
        shard_batch = Batch(node.shard.inputs, node.shard.labels)
        loss = local_objective_loss(
            algo, spec, theta, shard_batch, hp,
            prox_anchor=prox_anchor, curv_anchor=curv_anchor,
        )
        return theta, fisher, fisher_theta, loss

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(local, nodes))
    else:
        outputs = [local(node) for node in nodes]

    results = []
    for node, (theta, fisher, fisher_theta, _loss) in zip(nodes, outputs):
        if fisher_flow:
            if sparsity is not None:
                idx, f_vals, ft_vals = sparsify_topq(fisher, fisher_theta, sparsity)
                ledger.record(rnd, node.node_id, "up", p + 2 * idx.size, idx.size)
                dense_f = np.zeros(p)
                dense_f[idx] = f_vals
                dense_ft = np.zeros(p)
                dense_ft[idx] = ft_vals
                fisher, fisher_theta = dense_f, dense_ft
            else:
                ledger.record(rnd, node.node_id, "up", 3 * p)
            # what the node transmitted is what it subtracts next round
            node.fisher_last = fisher
            node.fisher_theta_last = fisher_theta
        else:
            ledger.record(rnd, node.node_id, "up", p)
        node.theta_last = theta
        results.append((theta, fisher, fisher_theta))

    theta_mean, u, v = aggregate(results)
    if not fisher_flow:
        u = np.zeros(p)
        v = np.zeros(p)
    new_server = ServerState(round=rnd + 1, theta_mean=theta_mean, u=u, v=v)

    losses = [out[3] for out in outputs]
    row = {
        "round": rnd + 1,
        "test_acc": evaluate(spec, theta_mean, test_set),
        "train_loss": float(sum(losses) / len(losses)),
        "up_elems": ledger.total("up"),
        "down_elems": ledger.total("down"),
    }
    return new_server, row


def run_experiment(
    cfg: "RunConfig",
    train: Dataset | None = None,
    test: Dataset | None = None,
    threads: int = 1,
) -> RunResult:
    """Run a full configured experiment; the result is a pure function of cfg.

    Stops after max_rounds, or earlier once test accuracy reaches the largest
    configured threshold. Datasets may be injected to skip loading.
    """
    started_at = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    if train is None or test is None:
        train, test = cfg.data.load()
    spec = cfg.model
    hp = cfg.hyperparams
    shards = cfg.partition.split(train)

    theta0 = param_init(spec, cfg.global_seed)
    p = spec.param_count
    server = ServerState.initial(theta0)
    nodes = [
        NodeState(i, shard, theta0.copy(), np.zeros(p), np.zeros(p))
        for i, shard in enumerate(shards)
    ]
    ledger = BandwidthLedger()

    base_losses = [forward(spec, theta0, Batch(s.inputs, s.labels))[1] for s in shards]
    rows = [
        {
            "round": 0,
            "test_acc": evaluate(spec, theta0, test),
            "train_loss": float(sum(base_losses) / len(base_losses)),
            "up_elems": 0,
            "down_elems": 0,
        }
    ]
    stop_at = max(cfg.accuracy_thresholds) if cfg.accuracy_thresholds else None
    for _ in range(cfg.max_rounds):
        if stop_at is not None and rows[-1]["test_acc"] >= stop_at:
            break
        server, row = run_round(
            server, nodes, cfg.algo, spec, hp,
            test_set=test,
            round_seed=round_seed_for(cfg.global_seed, server.round),
            ledger=ledger,
            sparsity=cfg.sparsity,
            threads=threads,
        )
        rows.append(row)

    rounds_to = {
        thr: next((row["round"] for row in rows if row["test_acc"] >= thr), None)
        for thr in cfg.accuracy_thresholds
    }
    metadata = {
        "fisher_estimate": "empirical, observed labels",
        "fisher_dataset": (
            "full local shard"
            if hp.fisher_batch_limit is None
            else f"uniform subsample of {hp.fisher_batch_limit}"
        ),
        "loss_metric": "local objective; the penalty's parameter-independent constant is omitted",
        "early_stop_threshold": stop_at,
        "started_at": started_at,
        "wall_time_sec": round(time.perf_counter() - t0, 3),
    }
    return RunResult(
        rows=rows,
        rounds_to_threshold=rounds_to,
        config=cfg.to_dict(),
        ledger=ledger.to_records(),
        metadata=metadata,
    )
