"""Learning-curve figures rendered to files, next to the delimited curve data."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .results import RunResult, run_label

_FIGSIZE = (6.4, 4.2)
_DPI = 150


def _curve_axes(ylabel: str):
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.set_xlabel("round")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return fig, ax


def write_curves(results: list[RunResult], out_dir: str | Path) -> list[Path]:
    """Accuracy and loss curves for a set of runs, plus a curves.csv long table.

    Returns the paths written: accuracy_vs_round.png, loss_vs_round.png,
    curves.csv.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    labeled = [(run_label(r.config), r.rows) for r in results]

    for metric, ylabel, fname in (
        ("test_acc", "test accuracy", "accuracy_vs_round.png"),
        ("train_loss", "train loss", "loss_vs_round.png"),
    ):
        fig, ax = _curve_axes(ylabel)
        for label, rows in labeled:
            ax.plot([r["round"] for r in rows], [r[metric] for r in rows], label=label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=_DPI)
        plt.close(fig)
        written.append(path)

    lines = ["run,round,test_acc,train_loss"]
    for label, rows in labeled:
        for row in rows:
            lines.append(
                f"\"{label}\",{row['round']},{row['test_acc']!r},{row['train_loss']!r}"
            )
    csv_path = out_dir / "curves.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    written.append(csv_path)
    return written
