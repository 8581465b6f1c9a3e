"""Dense and CP node tensors and their single-node contraction kernels.

All scalars are complex128. A dense node tensor is stored row-major with
the output index slowest, i.e. ``entries[mu, mu_1, ..., mu_b]``. A CP
tensor is the sum over ``k`` of ``out_factors[k] (x) in_factors[0][k] (x)
... (x) in_factors[b-1][k]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, ShapeError

DTYPE = np.complex128

#: default cap on the number of entries ``cp_to_dense`` may materialize
DENSE_ELEMENT_CAP = 1 << 24


class MultiplyCounter:
    """Tally of complex scalar multiplications executed by the kernels."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _as_complex(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=DTYPE, copy=True)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Unconstrained node tensor of shape ``(out_dim, *in_dims)``."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _as_complex(self.entries, "entries")
        if arr.ndim < 2:
            raise ShapeError(
                f"dense tensor needs an output and at least one input index, got shape {arr.shape}"
            )
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_flat(cls, out_dim: int, in_dims: Sequence[int], flat) -> "DenseTensor":
        flat = np.asarray(flat)
        expected = out_dim * int(np.prod(in_dims))
        if flat.size != expected:
            raise ShapeError(f"expected {expected} entries for ({out_dim}, {list(in_dims)}), got {flat.size}")
        return cls(flat.reshape((out_dim, *in_dims)))

    @property
    def out_dim(self) -> int:
        return self.entries.shape[0]

    @property
    def in_dims(self) -> list[int]:
        return list(self.entries.shape[1:])

    @property
    def order(self) -> int:
        return self.entries.ndim - 1


@dataclass(frozen=True, eq=False)
class CPTensor:
    """Node tensor held as a rank-``r`` sum of outer products.

    ``out_factors`` has shape ``(r, out_dim)``; ``in_factors[n]`` has shape
    ``(r, in_dims[n])``. Row ``k`` of every factor belongs to term ``k``.
    """

    out_factors: np.ndarray
    in_factors: tuple

    def __post_init__(self):
        out = _as_complex(self.out_factors, "out_factors")
        if out.ndim != 2 or out.shape[0] < 1:
            raise ShapeError(f"out_factors must have shape (rank >= 1, out_dim), got {out.shape}")
        legs = tuple(_as_complex(f, f"in_factors[{n}]") for n, f in enumerate(self.in_factors))
        if not legs:
            raise ShapeError("CP tensor needs at least one input leg")
        for n, leg in enumerate(legs):
            if leg.ndim != 2 or leg.shape[0] != out.shape[0]:
                raise ShapeError(
                    f"in_factors[{n}] must have shape ({out.shape[0]}, dim), got {leg.shape}"
                )
        object.__setattr__(self, "out_factors", out)
        object.__setattr__(self, "in_factors", legs)

    @property
    def rank(self) -> int:
        return self.out_factors.shape[0]

    @property
    def out_dim(self) -> int:
        return self.out_factors.shape[1]

    @property
    def in_dims(self) -> list[int]:
        return [leg.shape[1] for leg in self.in_factors]

    @property
    def order(self) -> int:
        return len(self.in_factors)


def _check_children(in_dims, children) -> list[np.ndarray]:
    if len(children) != len(in_dims):
        raise ShapeError(f"expected {len(in_dims)} child vectors, got {len(children)}")
    vecs = []
    for n, (dim, child) in enumerate(zip(in_dims, children)):
        v = np.asarray(child, dtype=DTYPE)
        if v.shape != (dim,):
            raise ShapeError(f"child slot {n}: expected a vector of length {dim}, got shape {v.shape}")
        vecs.append(v)
    return vecs


def dense_contract(t: DenseTensor, children, counter: MultiplyCounter | None = None) -> np.ndarray:
    """Contract every input leg of ``t`` with the matching child vector.

    Legs are absorbed last-to-first, so the work is
    ``out * (in_1 + in_1 in_2 + ... + in_1...in_b)`` multiplications.
    """
    vecs = _check_children(t.in_dims, children)
    acc = t.entries
    for v in reversed(vecs):
        if counter is not None:
            counter.add(acc.size)
        acc = acc @ v
    return np.array(acc, dtype=DTYPE)


def cp_contract(t: CPTensor, children, counter: MultiplyCounter | None = None) -> np.ndarray:
    """Contract a CP tensor with ``b`` child vectors without materializing it."""
    vecs = _check_children(t.in_dims, children)
    weights = None
    for leg, v in zip(t.in_factors, vecs):
        psi = leg @ v
        if counter is not None:
            counter.add(leg.size)
        if weights is None:
            weights = psi
        else:
            weights = weights * psi
            if counter is not None:
                counter.add(t.rank)
    if counter is not None:
        counter.add(t.out_factors.size)
    return weights @ t.out_factors


def cp_to_dense(t: CPTensor, max_elements: int = DENSE_ELEMENT_CAP) -> DenseTensor:
    size = t.out_dim * int(np.prod(t.in_dims))
    if size > max_elements:
        raise CapacityError(
            f"materializing a {t.out_dim}x{'x'.join(map(str, t.in_dims))} tensor needs {size} entries,"
            f" above the cap of {max_elements}"
        )
    acc = t.out_factors
    for leg in t.in_factors:
        # acc: (r, prod of dims so far); outer product per term
        acc = (acc[:, :, None] * leg[:, None, :]).reshape(t.rank, -1)
    return DenseTensor(acc.sum(axis=0).reshape((t.out_dim, *t.in_dims)))


def cp_gram(t: CPTensor) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gram matrices ``G[k, k'] = <f_k, f_k'>`` of the output and each input leg."""
    out = t.out_factors.conj() @ t.out_factors.T
    legs = [leg.conj() @ leg.T for leg in t.in_factors]
    return out, legs


def frobenius_norm_sq(t: DenseTensor | CPTensor) -> float:
    if isinstance(t, DenseTensor):
        return float(np.vdot(t.entries, t.entries).real)
    out, legs = cp_gram(t)
    prod = out
    for g in legs:
        prod = prod * g
    return max(float(prod.sum().real), 0.0)
