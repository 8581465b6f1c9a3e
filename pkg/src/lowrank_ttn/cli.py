"""Command-line entry point: ``lowrank-ttn {train,eval,inspect,plot}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, coerce, dump_config, load_config, parse_config_text
from .costs import node_shapes, param_count, multiply_count
from .errors import CheckpointError, ConfigError, DivergenceError, TTNError
from .tensors import CPTensor, DenseTensor, MultiplyCounter, cp_contract, dense_contract

log = logging.getLogger("lowrank_ttn")

EXIT_OK, EXIT_USAGE, EXIT_LOAD, EXIT_DIVERGED = 0, 2, 3, 4


def cmd_train(config: RunConfig, resume: str | None = None, data=None) -> int:
    from .runner import run_training

    try:
        result = run_training(config, resume=resume, data=data)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"best validation accuracy {result.best_val_accuracy:.4f} (epoch {result.best_epoch}, batch {result.best_batch})")
    print(f"final test accuracy {result.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(checkpoint_path, split: str = "test", data_root: str | None = None, data=None) -> float:
    """Accuracy of a checkpoint on one split (dropout off); prints accuracy and confusion counts."""
    from .runner import _flat, load_data
    from .training import evaluate

    ck = ckpt_io.load(checkpoint_path)
    config = ck.config
    if data_root:
        config.data_root = data_root
    sets = dict(zip(("train", "val", "test"), data if data is not None else load_data(config)))
    if split not in sets:
        raise ConfigError(f"split must be train, val or test, got {split!r}")
    target = sets[split]
    report = evaluate(ck.model, _flat(target.images, ck.model.topology), target.labels)
    print(f"{split} accuracy: {report.accuracy:.4f} ({report.correct}/{report.total})")
    if report.degenerate:
        print(f"degenerate outputs (counted as errors): {report.degenerate}")
    L = ck.model.num_classes
    print("confusion counts (rows: true class, columns: predicted class)")
    print("      " + " ".join(f"{c:>5d}" for c in range(1, L + 1)))
    for i in range(L):
        print(f"{i + 1:>5d} " + " ".join(f"{v:>5d}" for v in report.confusion[i, 1:]))
    return report.accuracy


# largest node tensor the measured count will allocate
_MEASURE_CAP = 1 << 22


def measured_multiplies(topology, m: int, r: int | None, L: int, d: int = 2) -> int | None:
    """Per-image multiplications tallied by running the node kernels once per layer.

    Returns None when a dense node tensor is too large to allocate.
    """
    rng = np.random.default_rng(0)
    total = 0
    per_layer = {}
    for shape in node_shapes(topology, m, L, d):
        key = (shape.layer, shape.out_dim, shape.in_dims)
        if key not in per_layer:
            children = [rng.normal(size=k) + 0j for k in shape.in_dims]
            counter = MultiplyCounter()
            if r is None:
                size = shape.out_dim * int(np.prod(shape.in_dims))
                if size > _MEASURE_CAP:
                    return None
                dense_contract(DenseTensor(np.zeros((shape.out_dim, *shape.in_dims))), children, counter)
            else:
                t = CPTensor(np.zeros((r, shape.out_dim)), tuple(np.zeros((r, k)) for k in shape.in_dims))
                cp_contract(t, children, counter)
            per_layer[key] = counter.count
        total += per_layer[key]
    return total


def inspect_report(config: RunConfig) -> dict:
    from .topology import build_topology

    topo = build_topology(config.topology, config.image_shape())
    m, L, d, r = config.bond_dim, config.num_classes, config.feature_dim, config.rank
    rep = {
        "topology": config.topology,
        "branching": topo.branching,
        "layers": topo.layers,
        "layer_sizes": topo.layer_sizes,
        "params_full": param_count(topo, m, None, L, d),
        "params_cp": param_count(topo, m, r, L, d),
        "mults_full": multiply_count(topo, m, None, L, d),
        "mults_cp": multiply_count(topo, m, r, L, d),
        "measured_full": measured_multiplies(topo, m, None, L, d),
        "measured_cp": measured_multiplies(topo, m, r, L, d),
    }
    rep["mult_ratio"] = rep["mults_full"] / rep["mults_cp"]
    return rep


def cmd_inspect(config: RunConfig) -> dict:
    rep = inspect_report(config)
    print(f"topology {rep['topology']}: b={rep['branching']}, T={rep['layers']}, nodes per layer {rep['layer_sizes']}")
    print(f"m={config.bond_dim} r={config.rank} L={config.num_classes} d={config.feature_dim}")
    print(f"complex parameters   full: {rep['params_full']:>14d}   cp: {rep['params_cp']:>12d}")
    print(f"multiplies per image full: {rep['mults_full']:>14d}   cp: {rep['mults_cp']:>12d}")
    mf = "n/a" if rep["measured_full"] is None else str(rep["measured_full"])
    print(f"measured by kernels  full: {mf:>14s}   cp: {rep['measured_cp']:>12d}")
    print(f"multiply ratio full/cp: {rep['mult_ratio']:.4f}")
    return rep


def _config_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="key = value config file")
    parent.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    for f in fields(RunConfig):
        parent.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.type.upper())
    return parent


def _config_from_args(args, base: RunConfig | None = None) -> RunConfig:
    values = base.to_dict() if base is not None else {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = coerce(k.strip(), v)
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = coerce(f.name, raw)
    return load_config(None, values)


def build_parser() -> argparse.ArgumentParser:
    cfg = _config_parser()
    parser = argparse.ArgumentParser(prog="lowrank-ttn", description="Tree tensor network image classifiers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[cfg], help="train a classifier")
    p.add_argument("--resume", help="continue from a checkpoint (its config is the base)")
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--data-root")
    sub.add_parser("inspect", parents=[cfg], help="parameter and cost report")
    p = sub.add_parser("plot", help="render accuracy histories from metrics files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--batches-per-epoch", type=int, required=True)
    p.add_argument("--out", default="accuracy_history.png")
    p.add_argument("--title", default="")
    sub.add_parser("show-config", parents=[cfg], help="print the resolved config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            base = ckpt_io.load(args.resume).config if args.resume else None
            return cmd_train(_config_from_args(args, base), resume=args.resume)
        if args.command == "eval":
            try:
                cmd_eval(args.checkpoint, args.split, args.data_root)
            except CheckpointError as exc:
                print(f"cannot load checkpoint: {exc}", file=sys.stderr)
                return EXIT_LOAD
            return EXIT_OK
        if args.command == "inspect":
            cmd_inspect(_config_from_args(args))
            return EXIT_OK
        if args.command == "show-config":
            sys.stdout.write(dump_config(_config_from_args(args)))
            return EXIT_OK
        if args.command == "plot":
            from .plotting import history_rows, plot_histories, write_history

            runs = {Path(p).parent.name or p: history_rows(p, args.batches_per_epoch) for p in args.metrics}
            plot_histories(runs, args.out, args.title)
            for p, rows in zip(args.metrics, runs.values()):
                write_history(rows, Path(p).with_name("accuracy_history.csv"))
            print(f"wrote {args.out}")
            return EXIT_OK
    except CheckpointError as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except (TTNError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
