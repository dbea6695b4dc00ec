"""Command-line front door: single runs, stiffness grid search, tables, figures.

Exit codes: 0 success, 2 configuration or input error, 3 grid search found no
value reaching the target accuracy.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .data import IdxFormatError
from .objectives import Algorithm
from .orchestrator import run_experiment
from .plots import write_curves
from .results import (
    NOT_REACHED,
    RunResult,
    render_text_table,
    summary_table,
    write_table_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TARGET_NOT_REACHED = 3


def _write_run(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_csv(out_dir / "metrics.csv")
    result.write_json(out_dir / "result.json")


def _resolve_out_dir(args, cfg) -> Path:
    out = args.out_dir or cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: pass --out-dir or set [output] dir")
    return Path(out)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, global_seed=args.seed)
    result = run_experiment(cfg, threads=args.threads)
    _write_run(result, _resolve_out_dir(args, cfg))
    print(result.summary_line())
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    param = args.param
    if param == "lambda" and cfg.algo is not Algorithm.FEDCURV:
        raise ConfigError("--param lambda requires run.algo = fedcurv")
    if param == "mu" and cfg.algo is not Algorithm.FEDPROX:
        raise ConfigError("--param mu requires run.algo = fedprox")
    target = args.target
    if target not in cfg.accuracy_thresholds:
        raise ConfigError(
            f"--target {target:g} must be one of run.accuracy_thresholds "
            f"{list(cfg.accuracy_thresholds)}"
        )
    out_dir = _resolve_out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[float, RunResult] = {}

    def evaluate(value: float) -> tuple[float, RunResult]:
        res = run_experiment(cfg.with_stiffness(param, value), threads=1)
        _write_run(res, out_dir / f"{param}_{value:.10g}")
        return value, res

    def evaluate_many(values: list[float]) -> None:
        todo = [v for v in values if v not in results]
        if args.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                for value, res in pool.map(evaluate, todo):
                    results[value] = res
        else:
            for value in todo:
                results[value] = evaluate(value)[1]

    def rounds_of(value: float) -> float:
        rounds = results[value].rounds_to_threshold[target]
        return math.inf if rounds is None else rounds

    # phase 1: multiplicative decade grid; ties prefer the smaller value
    phase1 = [args.grid_base * 10.0**k for k in range(args.grid_kmin, args.grid_kmax + 1)]
    evaluate_many(phase1)
    best1 = min(phase1, key=lambda v: (rounds_of(v), v))

    reached = rounds_of(best1) != math.inf
    phase2: list[float] = []
    if reached:
        # phase 2: factor-of-2 refinement around the phase-1 winner
        phase2 = sorted({best1 / 2.0, best1, 2.0 * best1})
        evaluate_many(phase2)
        best = min(phase2, key=lambda v: (rounds_of(v), v))
    else:
        best = best1

    entries = [
        {
            "value": value,
            "rounds_to_target": results[value].rounds_to_threshold[target],
            "best_acc": results[value].best_accuracy,
        }
        for value in sorted(results)
    ]
    table_lines = [f"value,rounds_to_{target:g},best_acc"]
    for e in entries:
        rounds_cell = str(e["rounds_to_target"]) if e["rounds_to_target"] is not None else NOT_REACHED
        table_lines.append(f"{e['value']:.10g},{rounds_cell},{e['best_acc']!r}")
    (out_dir / "grid.csv").write_text("\n".join(table_lines) + "\n")
    summary = {
        "param": param,
        "target": target,
        "phase1_values": phase1,
        "phase2_values": phase2,
        "best_value": best,
        "best_rounds": results[best].rounds_to_threshold[target],
        "reached_target": reached,
        "entries": entries,
    }
    (out_dir / "grid_result.json").write_text(json.dumps(summary, indent=2) + "\n")

    print("\n".join(table_lines))
    if not reached:
        print(
            f"no {param} value reached test accuracy {target:g}; "
            f"best was {results[best1].best_accuracy:.4f} at {param}={best1:.10g}"
        )
        return EXIT_TARGET_NOT_REACHED
    print(f"best {param} = {best:.10g} ({results[best].rounds_to_threshold[target]} rounds to {target:g})")
    return EXIT_OK


def cmd_table(args) -> int:
    results = [RunResult.read_json(path) for path in args.results]
    header, rows = summary_table(results)
    print(render_text_table(header, rows))
    if args.csv:
        write_table_csv(header, rows, args.csv)
    return EXIT_OK


def cmd_plot(args) -> int:
    results = [RunResult.read_json(path) for path in args.results]
    for path in write_curves(results, args.out_dir):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated learning simulator (FedAvg, FedProx, FedCurv)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one configured run")
    run_p.add_argument("--config", required=True, help="run config file (INI)")
    run_p.add_argument(
        "--out-dir", default=None,
        help="directory for metrics.csv and result.json (default: the config's [output] dir)",
    )
    run_p.add_argument("--seed", type=int, default=None, help="override run.global_seed")
    run_p.add_argument("--threads", type=int, default=1, help="worker threads across nodes")

    grid_p = sub.add_parser("grid", help="two-phase multiplicative search over lambda or mu")
    grid_p.add_argument("--config", required=True)
    grid_p.add_argument("--out-dir", default=None)
    grid_p.add_argument("--param", required=True, choices=("lambda", "mu"))
    grid_p.add_argument("--target", required=True, type=float, help="accuracy threshold to minimize rounds to")
    grid_p.add_argument("--threads", type=int, default=1, help="concurrent grid runs")
    grid_p.add_argument("--grid-base", type=float, default=1.0, help="phase-1 base value")
    grid_p.add_argument("--grid-kmin", type=int, default=-5, help="phase-1 smallest decade exponent")
    grid_p.add_argument("--grid-kmax", type=int, default=1, help="phase-1 largest decade exponent")

    table_p = sub.add_parser("table", help="rounds-to-accuracy summary across result files")
    table_p.add_argument("results", nargs="+", help="result.json files")
    table_p.add_argument("--csv", default=None, help="also write the table as CSV")

    plot_p = sub.add_parser("plot", help="render learning-curve figures from result files")
    plot_p.add_argument("results", nargs="+", help="result.json files")
    plot_p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": cmd_run,
        "grid": cmd_grid,
        "table": cmd_table,
        "plot": cmd_plot,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, IdxFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
