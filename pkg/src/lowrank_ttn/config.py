"""Run configuration: flat ``key = value`` files plus command-line overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .data import DATA_ROOT_ENV, DATASETS, SplitSpec
from .errors import ConfigError
from .training import TrainConfig


@dataclass
class RunConfig:
    dataset: str = "mnist"
    data_root: str = ""
    topology: str = "2d-b4"
    image_size: int = 16
    num_classes: int = 10
    bond_dim: int = 8
    kind: str = "cp"
    rank: int = 16
    feature_dim: int = 2
    learn_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    init_std: float = 0.4
    dropout_rate: float = 0.0
    penalty: float = 0.0
    batch_size: int = 250
    epochs: int = 10
    seed: int = 0
    split_seed: int = 0
    train_count: int = 55000
    val_count: int = 5000
    test_count: int = 10000
    train_limit: int = 0  # 0 keeps the full training split
    output_dir: str = "runs/default"
    checkpoint_every: int = 1  # epochs; 0 disables periodic checkpoints
    eval_train_subset: int = 5000
    eval_full_train: bool = False
    timing: str = "wall"  # "none" writes 0 for wall_seconds (byte-reproducible metrics)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {', '.join(DATASETS)}, got {self.dataset!r}")
        if self.kind not in ("cp", "dense"):
            raise ConfigError(f"kind must be 'cp' or 'dense', got {self.kind!r}")
        if self.timing not in ("wall", "none"):
            raise ConfigError(f"timing must be 'wall' or 'none', got {self.timing!r}")
        for name in ("image_size", "num_classes", "bond_dim", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.kind == "cp" and self.rank < 1:
            raise ConfigError(f"rank must be >= 1 for a CP model, got {self.rank}")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        for name in ("checkpoint_every", "train_limit", "eval_train_subset", "train_count", "val_count", "test_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        self.train_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learn_rate=self.learn_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            init_std=self.init_std,
            dropout_rate=self.dropout_rate,
            penalty=self.penalty,
            batch_size=self.batch_size,
            epochs=self.epochs,
            rng_seed=self.seed,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_count, self.val_count, self.test_count, self.split_seed)

    def image_shape(self) -> tuple:
        if self.topology.startswith("1d"):
            return (self.image_size * self.image_size,)
        return (self.image_size, self.image_size)

    def resolved_data_root(self) -> str:
        return self.data_root or os.environ.get(DATA_ROOT_ENV, "")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)


def coerce(name: str, raw: str):
    """Convert the string ``raw`` to the type of RunConfig field ``name``."""
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return raw.strip()


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return RunConfig.from_dict(values)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_dict().items())
