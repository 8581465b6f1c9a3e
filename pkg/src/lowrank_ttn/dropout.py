"""Tensor dropout: Bernoulli suppression of CP terms with 1/(1-p) rescaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """Keep indicators per CP term for every layer below the top.

    ``keep[t]`` is a boolean array of shape ``(nodes in layer t, rank)``;
    the top layer is never masked, so ``len(keep) == layers - 1``.
    """

    rate: float
    keep: tuple

    def term_weights(self, layer: int) -> np.ndarray | None:
        """Per-term multipliers lambda / (1 - p) for ``layer`` (None at the top)."""
        if layer >= len(self.keep):
            return None
        return self.keep[layer].astype(np.float64) / (1.0 - self.rate)

    def check_compatible(self, model) -> None:
        if model.kind != "cp":
            raise UsageError("tensor dropout needs a CP model; dense node tensors have no terms to drop")
        expected = [(n, model.rank) for n in model.topology.layer_sizes[:-1]]
        got = [k.shape for k in self.keep]
        if got != expected:
            raise UsageError(f"dropout mask shapes {got} do not match the model's {expected}")


def sample_dropout_mask(model, p: float, rng: np.random.Generator) -> DropoutMask:
    """Draw fresh keep indicators: 1 with probability ``1 - p``."""
    if model.kind != "cp":
        raise UsageError("tensor dropout needs a CP model")
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    keep = tuple(rng.random((n, model.rank)) >= p for n in model.topology.layer_sizes[:-1])
    return DropoutMask(float(p), keep)
