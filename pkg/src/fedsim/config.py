"""Run configuration.

Config files are INI-style: one section per concern, flat key=value entries.
Parsing is strict: unknown sections or keys abort with an error naming them,
so a typo like "lamda" can never silently fall back to a default. The full
grammar is documented in the README.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .data import Dataset, PartitionSpec, load_idx, partition_iid, partition_noniid, synth_blobs
from .model import ModelSpec
from .objectives import Algorithm, HyperParams
from .orchestrator import SparsityConfig

DATA_DIR_ENV = "FEDSIM_DATA_DIR"

_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid or malformed run configuration; the message names the field."""


@dataclass(frozen=True)
class DataConfig:
    """Dataset source: synthetic Gaussian blobs or an IDX file quartet."""

    source: str
    # synthetic
    classes: int | None = None
    per_class: int | None = None
    test_per_class: int | None = None
    dim: int | None = None
    seed: int | None = None
    spread: float | None = None
    noise: float | None = None
    # idx
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    _SYNTH_DEFAULTS = {
        "classes": 10,
        "per_class": 100,
        "test_per_class": 50,
        "dim": 20,
        "seed": 0,
        "spread": 4.0,
        "noise": 1.0,
    }

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {self.source!r}")
        if self.source == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if getattr(self, key) is None:
                    raise ConfigError(f"data.{key} is required when data.source = idx")
        else:
            for key, default in self._SYNTH_DEFAULTS.items():
                if getattr(self, key) is None:
                    object.__setattr__(self, key, default)

    def load(self) -> tuple[Dataset, Dataset]:
        if self.source == "synthetic":
            train = synth_blobs(
                self.classes, self.per_class, self.dim, self.seed,
                spread=self.spread, noise=self.noise,
            )
            test = synth_blobs(
                self.classes, self.test_per_class, self.dim, self.seed + 1,
                spread=self.spread, noise=self.noise,
            )
            return train, test
        train = load_idx(self.train_images, self.train_labels)
        test = load_idx(self.test_images, self.test_labels)
        return train, test

    def to_dict(self) -> dict:
        if self.source == "synthetic":
            return {
                "source": self.source,
                "classes": self.classes,
                "per_class": self.per_class,
                "test_per_class": self.test_per_class,
                "dim": self.dim,
                "seed": self.seed,
                "spread": self.spread,
                "noise": self.noise,
            }
        return {
            "source": self.source,
            "train_images": self.train_images,
            "train_labels": self.train_labels,
            "test_images": self.test_images,
            "test_labels": self.test_labels,
        }


@dataclass(frozen=True)
class PartitionConfig:
    """How the training set is split across nodes."""

    n_nodes: int
    kind: str = "noniid"
    blocks_per_node: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("noniid", "iid"):
            raise ConfigError(f"partition.kind must be 'noniid' or 'iid', got {self.kind!r}")
        if self.n_nodes < 1:
            raise ConfigError(f"partition.n_nodes must be >= 1, got {self.n_nodes}")
        if self.blocks_per_node < 1:
            raise ConfigError(
                f"partition.blocks_per_node must be >= 1, got {self.blocks_per_node}"
            )

    def split(self, ds: Dataset) -> list[Dataset]:
        if self.kind == "noniid":
            return partition_noniid(
                ds, PartitionSpec(self.n_nodes, self.blocks_per_node, self.seed)
            )
        return partition_iid(ds, self.n_nodes, self.seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_nodes": self.n_nodes,
            "blocks_per_node": self.blocks_per_node,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; a run's outputs are a pure function of this."""

    algo: Algorithm
    model: ModelSpec
    hyperparams: HyperParams
    data: DataConfig
    partition: PartitionConfig
    max_rounds: int
    accuracy_thresholds: tuple[float, ...] = (0.85, 0.9, 0.95)
    global_seed: int = 0
    sparsity: SparsityConfig | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ConfigError(f"run.max_rounds must be >= 0, got {self.max_rounds}")
        if self.global_seed < 0:
            raise ConfigError(f"run.global_seed must be >= 0, got {self.global_seed}")
        thr = self.accuracy_thresholds
        if any(not 0.0 < t < 1.0 for t in thr):
            raise ConfigError(f"run.accuracy_thresholds must lie in (0, 1), got {list(thr)}")
        if any(a >= b for a, b in zip(thr, thr[1:])):
            raise ConfigError(
                f"run.accuracy_thresholds must be strictly increasing, got {list(thr)}"
            )
        if self.hyperparams.learning_rate <= 0:
            raise ConfigError(
                f"hyperparams.learning_rate must be > 0, got {self.hyperparams.learning_rate}"
            )

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "algo": self.algo.value,
            "max_rounds": self.max_rounds,
            "global_seed": self.global_seed,
            "accuracy_thresholds": list(self.accuracy_thresholds),
            "model": {
                "layer_sizes": list(self.model.layer_sizes),
                "activation": self.model.activation,
            },
            "hyperparams": {
                "learning_rate": hp.learning_rate,
                "batch_size": hp.batch_size,
                "local_epochs": hp.local_epochs,
                "lambda": hp.fedcurv_lambda,
                "mu": hp.fedprox_mu,
                "participation": hp.participation,
                "fisher_batch_limit": hp.fisher_batch_limit,
            },
            "data": self.data.to_dict(),
            "partition": self.partition.to_dict(),
            "sparsity": {"q": self.sparsity.q} if self.sparsity else None,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        hp = d["hyperparams"]
        return cls(
            algo=Algorithm.parse(d["algo"]),
            model=ModelSpec(tuple(d["model"]["layer_sizes"]), d["model"]["activation"]),
            hyperparams=HyperParams(
                learning_rate=hp["learning_rate"],
                batch_size=hp["batch_size"],
                local_epochs=hp["local_epochs"],
                fedcurv_lambda=hp["lambda"],
                fedprox_mu=hp["mu"],
                participation=hp["participation"],
                fisher_batch_limit=hp["fisher_batch_limit"],
            ),
            data=DataConfig(**d["data"]),
            partition=PartitionConfig(**d["partition"]),
            max_rounds=d["max_rounds"],
            accuracy_thresholds=tuple(d["accuracy_thresholds"]),
            global_seed=d["global_seed"],
            sparsity=SparsityConfig(d["sparsity"]["q"]) if d.get("sparsity") else None,
            out_dir=d.get("out_dir"),
        )

    def with_stiffness(self, param: str, value: float) -> "RunConfig":
        """Copy with lambda or mu replaced; used by the grid search."""
        if param == "lambda":
            hp = replace(self.hyperparams, fedcurv_lambda=value)
        elif param == "mu":
            hp = replace(self.hyperparams, fedprox_mu=value)
        else:
            raise ConfigError(f"grid parameter must be 'lambda' or 'mu', got {param!r}")
        return replace(self, hyperparams=hp)


class _Section:
    """One parsed config section with strict key accounting."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = dict(items)

    def take(self, key: str, conv, default=_REQUIRED):
        if key not in self.items:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key '{key}' in section [{self.name}]")
            return default
        raw = self.items.pop(key).strip()
        try:
            return conv(raw)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"{self.name}.{key}: cannot parse {raw!r} ({exc})") from exc

    def close(self):
        if self.items:
            key = sorted(self.items)[0]
            raise ConfigError(f"unknown key '{key}' in section [{self.name}]")


def _to_int(raw: str) -> int:
    return int(raw)


def _to_float(raw: str) -> float:
    return float(raw)


def _to_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


def _to_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(",") if part.strip())


def _to_opt_int(raw: str) -> int | None:
    if raw.lower() in ("", "none"):
        return None
    return int(raw)


def _resolve_data_path(raw: str) -> str:
    path = Path(raw).expanduser()
    if not path.is_absolute():
        base = os.environ.get(DATA_DIR_ENV)
        if base:
            path = Path(base).expanduser() / path
    return str(path)


_KNOWN_SECTIONS = ("run", "model", "hyperparams", "data", "partition", "sparsity", "output")
_REQUIRED_SECTIONS = ("run", "model", "data", "partition")


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a run config file; raises ConfigError on any problem."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with path.open() as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc

    if parser.defaults():
        raise ConfigError("unknown section [DEFAULT]")
    for section in parser.sections():
        if section not in _KNOWN_SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    for section in _REQUIRED_SECTIONS:
        if section not in parser.sections():
            raise ConfigError(f"missing required section [{section}]")

    def section(name: str) -> _Section:
        items = dict(parser[name]) if name in parser.sections() else {}
        return _Section(name, items)

    run = section("run")
    algo = run.take("algo", Algorithm.parse)
    max_rounds = run.take("max_rounds", _to_int)
    global_seed = run.take("global_seed", _to_int, default=0)
    thresholds = run.take("accuracy_thresholds", _to_float_list, default=(0.85, 0.9, 0.95))
    run.close()

    mdl = section("model")
    layer_sizes = mdl.take("layer_sizes", _to_int_list)
    activation = mdl.take("activation", str, default="relu")
    mdl.close()
    try:
        model = ModelSpec(layer_sizes, activation)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    hp_sec = section("hyperparams")
    hp_values = {
        "learning_rate": hp_sec.take("learning_rate", _to_float, default=0.01),
        "batch_size": hp_sec.take("batch_size", _to_int, default=32),
        "local_epochs": hp_sec.take("local_epochs", _to_int, default=1),
        "fedcurv_lambda": hp_sec.take("lambda", _to_float, default=0.0),
        "fedprox_mu": hp_sec.take("mu", _to_float, default=0.0),
        "participation": hp_sec.take("participation", _to_float, default=1.0),
        "fisher_batch_limit": hp_sec.take("fisher_batch_limit", _to_opt_int, default=None),
    }
    hp_sec.close()
    try:
        hyperparams = HyperParams(**hp_values)
    except ValueError as exc:
        raise ConfigError(f"hyperparams: {exc}") from exc

    data_sec = section("data")
    source = data_sec.take("source", str)
    if source == "synthetic":
        data = DataConfig(
            source="synthetic",
            classes=data_sec.take("classes", _to_int, default=10),
            per_class=data_sec.take("per_class", _to_int, default=100),
            test_per_class=data_sec.take("test_per_class", _to_int, default=50),
            dim=data_sec.take("dim", _to_int, default=20),
            seed=data_sec.take("seed", _to_int, default=0),
            spread=data_sec.take("spread", _to_float, default=4.0),
            noise=data_sec.take("noise", _to_float, default=1.0),
        )
    elif source == "idx":
        data = DataConfig(
            source="idx",
            train_images=data_sec.take("train_images", _resolve_data_path),
            train_labels=data_sec.take("train_labels", _resolve_data_path),
            test_images=data_sec.take("test_images", _resolve_data_path),
            test_labels=data_sec.take("test_labels", _resolve_data_path),
        )
    else:
        raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {source!r}")
    data_sec.close()

    part_sec = section("partition")
    partition = PartitionConfig(
        n_nodes=part_sec.take("n_nodes", _to_int),
        kind=part_sec.take("kind", str, default="noniid"),
        blocks_per_node=part_sec.take("blocks_per_node", _to_int, default=2),
        seed=part_sec.take("seed", _to_int, default=0),
    )
    part_sec.close()

    sparsity = None
    if "sparsity" in parser.sections():
        sp_sec = section("sparsity")
        q = sp_sec.take("q", _to_float)
        sp_sec.close()
        try:
            sparsity = SparsityConfig(q)
        except ValueError as exc:
            raise ConfigError(f"sparsity: {exc}") from exc

    out_dir = None
    if "output" in parser.sections():
        out_sec = section("output")
        out_dir = out_sec.take("dir", str)
        out_sec.close()

    return RunConfig(
        algo=algo,
        model=model,
        hyperparams=hyperparams,
        data=data,
        partition=partition,
        max_rounds=max_rounds,
        accuracy_thresholds=thresholds,
        global_seed=global_seed,
        sparsity=sparsity,
        out_dir=out_dir,
    )
