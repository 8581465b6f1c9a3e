"""Metrics CSV stream written by training runs."""
from __future__ import annotations

import csv
import math
from pathlib import Path

COLUMNS = ("epoch", "batch", "train_nll", "penalty", "train_acc", "val_acc", "wall_seconds")


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


class MetricsWriter:
    """Append-only CSV writer; every row is flushed so partial runs keep their history."""

    def __init__(self, path, keep_rows=None):
        self.path = Path(path)
        with open(self.path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row in keep_rows or ():
                w.writerow([_fmt(row[c]) for c in COLUMNS])

    def append(self, **row) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(row[c]) for c in COLUMNS])


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for rec in reader:
            row = {}
            for c in COLUMNS:
                v = int(rec[c]) if c in ("epoch", "batch") else float(rec[c])
                if isinstance(v, float) and not math.isfinite(v):
                    raise ValueError(f"{path}: non-finite {c} value {rec[c]!r}")
                row[c] = v
            rows.append(row)
    return rows
