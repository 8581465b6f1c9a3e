"""Adam over the real and imaginary parts of complex parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError


@dataclass(eq=False)
class AdamState:
    first: list  # float64 arrays, one per parameter array (real view)
    second: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros(_real(p).shape) for p in params], [np.zeros(_real(p).shape) for p in params], 0)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.first], [a.copy() for a in self.second], self.step)


def _real(a: np.ndarray) -> np.ndarray:
    """Float64 view with real and imaginary parts interleaved."""
    if np.iscomplexobj(a):
        return a.view(np.float64)
    return a


def adam_step(params, grads, state: AdamState, config) -> None:
    """Apply one bias-corrected Adam update in place.

    ``grads[i]`` holds dJ/d(Re) + i dJ/d(Im) for ``params[i]``, so each real
    component is updated as an independent real parameter.
    """
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ValueError("parameter, gradient and optimizer-state lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                "non-finite gradient; the optimization diverged (a norm penalty gamma > 0 usually helps)"
            )
    beta1, beta2 = config.beta1, config.beta2
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        gr = _real(np.ascontiguousarray(g))
        m *= beta1
        m += (1.0 - beta1) * gr
        v *= beta2
        v += (1.0 - beta2) * (gr * gr)
        _real(p)[...] -= config.learn_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
