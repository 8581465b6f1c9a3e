"""Binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"LRTTNCKP"
    4 bytes   format version (uint32)
    8 bytes   metadata length n (uint64)
    n bytes   UTF-8 JSON metadata (sorted keys): config echo, epoch,
              optimizer step, RNG state, best validation accuracy
    ...       model parameters, every complex value as two float64
              (real, imaginary), node by node in topology order
    ...       Adam first moments, then second moments (float64), same order

Node-major order falls out of the per-layer stacked arrays, whose leading
axis is the node index.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adam import AdamState
from .config import RunConfig
from .errors import CheckpointError
from .model import CPLayer, DenseLayer, FeatureMapSpec, TTNModel
from .topology import build_topology

MAGIC = b"LRTTNCKP"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


@dataclass(eq=False)
class Checkpoint:
    config: RunConfig
    model: TTNModel
    adam: AdamState
    epoch: int
    rng_state: dict
    extra: dict = field(default_factory=dict)


def _layer_shapes(config: RunConfig, topology) -> list[tuple]:
    b = topology.branching
    top = topology.layers - 1
    shapes = []
    for t, n in enumerate(topology.layer_sizes):
        in_dim = config.feature_dim if t == 0 else config.bond_dim
        out_dim = config.num_classes if t == top else config.bond_dim
        if config.kind == "cp":
            shapes += [(n, config.rank, out_dim), (n, b, config.rank, in_dim)]
        else:
            shapes.append((n, out_dim) + (in_dim,) * b)
    return shapes


def encode(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "adam_step": ckpt.adam.step,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEAD.pack(MAGIC, VERSION, len(blob)), blob]
    for p in ckpt.model.params:
        parts.append(np.ascontiguousarray(p).astype("<c16").tobytes())
    for group in (ckpt.adam.first, ckpt.adam.second):
        for a in group:
            parts.append(np.ascontiguousarray(a).astype("<f8").tobytes())
    return b"".join(parts)


def decode(raw: bytes) -> Checkpoint:
    if len(raw) < _HEAD.size:
        raise CheckpointError(f"checkpoint truncated: {len(raw)} bytes is shorter than the header")
    magic, version, meta_len = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = _HEAD.size
    if len(raw) < pos + meta_len:
        raise CheckpointError("checkpoint truncated inside the metadata block")
    try:
        meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
        config = RunConfig.from_dict(meta["config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    pos += meta_len
    topology = build_topology(config.topology, config.image_shape())
    shapes = _layer_shapes(config, topology)

    def take(shape, dtype):
        nonlocal pos
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if len(raw) < pos + nbytes:
            raise CheckpointError("checkpoint truncated inside the parameter block")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += nbytes
        return arr.astype(dtype.lstrip("<"), copy=True)

    params = [take(s, "<c16") for s in shapes]
    real_shapes = [s[:-1] + (2 * s[-1],) for s in shapes]
    first = [take(s, "<f8") for s in real_shapes]
    second = [take(s, "<f8") for s in real_shapes]
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} unexpected trailing bytes in checkpoint")
    if config.kind == "cp":
        layers = [CPLayer(params[i], params[i + 1]) for i in range(0, len(params), 2)]
    else:
        layers = [DenseLayer(p) for p in params]
    model = TTNModel(
        topology,
        config.kind,
        config.bond_dim,
        config.num_classes,
        layers,
        config.rank if config.kind == "cp" else None,
        FeatureMapSpec(config.feature_dim),
    )
    adam = AdamState(first, second, int(meta["adam_step"]))
    return Checkpoint(config, model, adam, int(meta["epoch"]), meta["rng_state"], meta.get("extra", {}))


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(raw)
