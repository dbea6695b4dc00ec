"""Run results: per-round metrics, file formats, and rounds-to-accuracy tables."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

CSV_HEADER = "round,test_acc,train_loss,up_elems,down_elems"

# metadata keys that vary between otherwise identical runs; excluded from
# determinism comparisons
VOLATILE_METADATA_KEYS = ("started_at", "wall_time_sec")

NOT_REACHED = "—"  # table cell for "threshold never reached"


@dataclass
class RunResult:
    """Everything one experiment produced.

    rows: per-round dicts (round, test_acc, train_loss and cumulative
    transmitted element counts); row 0 is the evaluation of the initial model.
    rounds_to_threshold: threshold -> first round index reaching it, or None.
    config: full echo of the effective run configuration.
    ledger: bandwidth ledger records.
    metadata: run annotations (estimator choices, timing, ...).
    """

    rows: list[dict]
    rounds_to_threshold: dict[float, int | None]
    config: dict
    ledger: list[dict]
    metadata: dict

    def write_csv(self, path: str | Path) -> None:
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(
                f"{row['round']},{row['test_acc']!r},{row['train_loss']!r},"
                f"{row['up_elems']},{row['down_elems']}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": self.rows,
            "rounds_to_threshold": {repr(k): v for k, v in self.rounds_to_threshold.items()},
            "ledger": self.ledger,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunResult":
        return cls(
            rows=d["rows"],
            rounds_to_threshold={float(k): v for k, v in d["rounds_to_threshold"].items()},
            config=d["config"],
            ledger=d["ledger"],
            metadata=d["metadata"],
        )

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def read_json(cls, path: str | Path) -> "RunResult":
        path = Path(path)
        try:
            with path.open() as f:
                d = json.load(f)
            return cls.from_json_dict(d)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed result file {path}: {exc}") from exc

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1]["test_acc"]

    @property
    def best_accuracy(self) -> float:
        return max(row["test_acc"] for row in self.rows)

    def summary_line(self) -> str:
        label = run_label(self.config)
        reached = ", ".join(
            f"{thr:g}: {self.rounds_to_threshold[thr] if self.rounds_to_threshold[thr] is not None else NOT_REACHED}"
            for thr in sorted(self.rounds_to_threshold)
        )
        line = (
            f"{label}: {len(self.rows) - 1} rounds, final test_acc {self.final_accuracy:.4f}"
        )
        if reached:
            line += f", rounds_to {{{reached}}}"
        return line


def _algo_part(config: dict) -> tuple[str, float]:
    """(display name with stiffness, stiffness value) for one run config."""
    algo = config["algo"]
    hp = config["hyperparams"]
    if algo == "fedcurv":
        return f"FedCurv, lambda={hp['lambda']:g}", hp["lambda"]
    if algo == "fedprox":
        return f"FedProx, mu={hp['mu']:g}", hp["mu"]
    return "FedAvg", 0.0


def run_label(config: dict) -> str:
    """Short human label for one run: algorithm, its stiffness, and E."""
    name, _ = _algo_part(config)
    return f"{name} (E={config['hyperparams']['local_epochs']})"


def summary_table(results: list[RunResult]) -> tuple[list[str], list[list[str]]]:
    """Rounds-to-accuracy table: one row per run, one column per threshold.

    Columns are thresholds in descending order (union across runs); rows sort
    by algorithm label, then local epochs descending. Cells show the first
    round reaching the threshold, or an em dash when it was never reached.
    """
    thresholds = sorted({thr for r in results for thr in r.rounds_to_threshold}, reverse=True)
    header = ["run"] + [f"{thr:g}" for thr in thresholds]
    keyed = []
    for r in results:
        algo_name, stiffness = _algo_part(r.config)
        epochs = r.config["hyperparams"]["local_epochs"]
        cells = [run_label(r.config)]
        for thr in thresholds:
            rounds = r.rounds_to_threshold.get(thr)
            cells.append(str(rounds) if rounds is not None else NOT_REACHED)
        keyed.append(((algo_name.split(",")[0], -epochs, stiffness), cells))
    keyed.sort(key=lambda kc: kc[0])
    return header, [cells for _key, cells in keyed]


def render_text_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def write_table_csv(header: list[str], rows: list[list[str]], path: str | Path) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(f'"{c}"' if "," in c else c for c in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")
