"""fedsim: deterministic federated learning simulator.

FedAvg, FedProx and FedCurv over a manually differentiated MLP, with
bandwidth-accounted synchronous rounds, non-iid data partitioning and an
experiment harness producing rounds-to-accuracy tables.
"""

from .config import ConfigError, DataConfig, PartitionConfig, RunConfig, load_config
from .data import (
    Dataset,
    IdxFormatError,
    PartitionSpec,
    load_idx,
    partition_iid,
    partition_noniid,
    synth_blobs,
)
from .fisher import estimate_fisher_diag, fisher_weighted_params
from .model import (
    Batch,
    ModelSpec,
    ShapeError,
    backward,
    evaluate,
    forward,
    param_init,
    sgd_step,
)
from .objectives import (
    Algorithm,
    CurvAnchor,
    HyperParams,
    build_curv_anchor,
    fedcurv_penalty,
    fedprox_penalty,
    local_objective_grad,
    local_objective_loss,
)
from .orchestrator import (
    BandwidthLedger,
    NodeState,
    ServerState,
    SparsityConfig,
    aggregate,
    round_seed_for,
    run_experiment,
    run_local_round,
    run_round,
    sparsify_topq,
)
from .results import RunResult, run_label, summary_table

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "BandwidthLedger",
    "Batch",
    "ConfigError",
    "CurvAnchor",
    "DataConfig",
    "Dataset",
    "HyperParams",
    "IdxFormatError",
    "ModelSpec",
    "NodeState",
    "PartitionConfig",
    "PartitionSpec",
    "RunConfig",
    "RunResult",
    "ServerState",
    "ShapeError",
    "SparsityConfig",
    "aggregate",
    "backward",
    "build_curv_anchor",
    "estimate_fisher_diag",
    "evaluate",
    "fedcurv_penalty",
    "fedprox_penalty",
    "fisher_weighted_params",
    "forward",
    "load_config",
    "load_idx",
    "local_objective_grad",
    "local_objective_loss",
    "param_init",
    "partition_iid",
    "partition_noniid",
    "round_seed_for",
    "run_experiment",
    "run_label",
    "run_local_round",
    "run_round",
    "sgd_step",
    "sparsify_topq",
    "summary_table",
    "synth_blobs",
]
