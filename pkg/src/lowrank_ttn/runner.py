"""Training runs driven by a RunConfig: metrics, checkpoints, model selection."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .adam import AdamState
from .config import RunConfig
from .data import load_splits
from .metrics import MetricsWriter, read_metrics
from .model import FeatureMapSpec
from .topology import build_topology
from .training import evaluate, initialize_model, norm_penalty, train_epoch

log = logging.getLogger(__name__)

SELECTION_RULE = "parameters with the best validation accuracy over all evaluation points"
DOWNSAMPLE_METHOD = "bilinear, pixel-centre aligned, 28x28 -> image_size^2, clamped to [0, 1]"


@dataclass
class RunResult:
    test_accuracy: float
    best_val_accuracy: float
    best_epoch: int
    best_batch: int
    output_dir: Path
    model: object


def load_data(config: RunConfig):
    shape = (config.image_size, config.image_size)
    train, val, test = load_splits(config.dataset, config.resolved_data_root() or None, config.split_spec(), shape)
    if config.train_limit:
        train = train.subset(config.train_limit, config.split_seed)
    return train, val, test


def _best_companion(path: Path) -> Path:
    return path.with_name(path.stem + ".best.ckpt")


def _flat(images, topology):
    return images.reshape(images.shape[0], topology.num_pixels)


def run_training(config: RunConfig, resume: str | None = None, data=None, render: bool = True) -> RunResult:
    """Train per ``config``; returns the best-validation model and its test accuracy.

    ``data`` may pass pre-loaded (train, val, test) ImageSets.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, val, test = data if data is not None else load_data(config)
    topology = build_topology(config.topology, config.image_shape())
    tcfg = config.train_config()
    fmap = FeatureMapSpec(config.feature_dim)
    rng = np.random.default_rng(config.seed)

    best = {"val": -1.0, "epoch": 0, "batch": 0}
    best_model = None
    wall_offset = 0.0
    metrics_path = out_dir / "metrics.csv"
    if resume:
        ck = ckpt_io.load(resume)
        model, state, start = ck.model, ck.adam, ck.epoch + 1
        rng.bit_generator.state = ck.rng_state
        best.update(ck.extra.get("best", {}))
        wall_offset = float(ck.extra.get("wall_seconds", 0.0))
        best_path = _best_companion(Path(resume))
        if best_path.exists():
            best_model = ckpt_io.load(best_path).model
        kept = [r for r in read_metrics(metrics_path) if r["epoch"] <= ck.epoch] if metrics_path.exists() else []
        writer = MetricsWriter(metrics_path, kept)
    else:
        model = initialize_model(
            topology, config.bond_dim, config.num_classes, config.kind, config.rank, rng, config.init_std, fmap
        )
        state = AdamState.zeros_like(model.params)
        start = 1
        writer = MetricsWriter(metrics_path)

    x_train = _flat(train.images, topology)
    x_val = _flat(val.images, topology)
    if config.eval_full_train:
        sub = np.arange(len(train))
    else:
        sub = np.sort(np.random.default_rng([config.seed, 1]).permutation(len(train))[:config.eval_train_subset])
    num_batches = math.ceil(len(train) / tcfg.batch_size)
    eval_points = {math.ceil(num_batches / 2), num_batches}
    t0 = time.perf_counter()
    pending = []

    def snapshot(epoch, extra_model=None):
        return ckpt_io.Checkpoint(
            config,
            extra_model or model,
            state,
            epoch,
            rng.bit_generator.state,
            {"best": dict(best), "wall_seconds": wall()},
        )

    def wall():
        return wall_offset + time.perf_counter() - t0 if config.timing == "wall" else 0.0

    for epoch in range(start, config.epochs + 1):

        def on_batch(k, nb, report, epoch=epoch):
            nonlocal best_model
            pending.append(report.nll)
            if k not in eval_points:
                return
            train_acc = evaluate(model, x_train[sub], train.labels[sub]).accuracy
            val_acc = evaluate(model, x_val, val.labels).accuracy
            pen = config.penalty * norm_penalty(model) if config.penalty > 0 else 0.0
            writer.append(
                epoch=epoch,
                batch=k,
                train_nll=float(np.mean(pending)),
                penalty=pen,
                train_acc=train_acc,
                val_acc=val_acc,
                wall_seconds=wall(),
            )
            pending.clear()
            log.info("epoch %d batch %d/%d: train_acc %.4f val_acc %.4f", epoch, k, nb, train_acc, val_acc)
            if val_acc > best["val"]:
                best.update(val=val_acc, epoch=epoch, batch=k)
                best_model = model.copy()
                ckpt_io.save(out_dir / "best.ckpt", snapshot(epoch, best_model))

        train_epoch(model, x_train, train.labels, tcfg, state, rng, epoch, on_batch)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            ck = snapshot(epoch)
            for name in ("last.ckpt", f"epoch-{epoch:03d}.ckpt"):
                ckpt_io.save(out_dir / name, ck)
                if best_model is not None:
                    # best-so-far parameters travel with each resumable checkpoint
                    ckpt_io.save(_best_companion(out_dir / name), snapshot(best["epoch"], best_model))

    final = best_model if best_model is not None else model
    test_report = evaluate(final, _flat(test.images, topology), test.labels)
    info = {
        "config": config.to_dict(),
        "final_test_accuracy": test_report.accuracy,
        "test_degenerate": test_report.degenerate,
        "best_val_accuracy": best["val"] if best_model is not None else None,
        "best_epoch": best["epoch"],
        "best_batch": best["batch"],
        "model_selection": SELECTION_RULE if best_model is not None else "final parameters (no evaluation points)",
        "downsampling": DOWNSAMPLE_METHOD,
        "validation_split": f"seeded shuffle of the training file, split_seed={config.split_seed}",
        "train_size": len(train),
        "val_size": len(val),
        "test_size": len(test),
        "batches_per_epoch": num_batches,
    }
    (out_dir / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    if render and read_metrics(metrics_path):
        from .plotting import render_run

        render_run(metrics_path, num_batches, out_dir, f"{config.kind} m={config.bond_dim} r={config.rank}")
    return RunResult(test_report.accuracy, best["val"], best["epoch"], best["batch"], out_dir, final)
