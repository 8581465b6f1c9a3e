"""Accuracy-history data files and figures from metrics CSVs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import read_metrics  # noqa: E402


def history_rows(metrics_path, batches_per_epoch: int):
    """(iteration, train_acc, val_acc) per evaluation point."""
    out = []
    for row in read_metrics(metrics_path):
        iteration = (row["epoch"] - 1) * batches_per_epoch + row["batch"]
        out.append((int(iteration), row["train_acc"], row["val_acc"]))
    return out


def write_history(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "train_acc", "val_acc"])
        for it, tr, va in rows:
            w.writerow([it, f"{tr:.6f}", f"{va:.6f}"])


def plot_histories(runs: dict, out_path, title: str = "") -> None:
    """Solid lines: training accuracy; dashed: validation, one colour per run."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (label, rows) in enumerate(runs.items()):
        if not rows:
            continue
        c = colors[k % len(colors)]
        its = [r[0] for r in rows]
        ax.plot(its, [r[1] for r in rows], "-", color=c, label=label)
        ax.plot(its, [r[2] for r in rows], "--", color=c)
    ax.set_xlabel("iteration")
    ax.set_ylabel("accuracy")
    if title:
        ax.set_title(title)
    if len(runs) > 1 or any(runs.values()):
        ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_run(metrics_path, batches_per_epoch: int, out_dir=None, label: str = "run"):
    """Write ``accuracy_history.csv`` and ``accuracy_history.png`` next to the metrics."""
    metrics_path = Path(metrics_path)
    out_dir = Path(out_dir) if out_dir else metrics_path.parent
    rows = history_rows(metrics_path, batches_per_epoch)
    write_history(rows, out_dir / "accuracy_history.csv")
    plot_histories({label: rows}, out_dir / "accuracy_history.png")
    return out_dir / "accuracy_history.png"
