"""Exact parameter and multiplication counts for full and low-rank trees."""
from __future__ import annotations

from dataclasses import dataclass

from .topology import TreeTopology


@dataclass(frozen=True)
class NodeShape:
    layer: int
    out_dim: int
    in_dims: tuple


def node_shapes(topology: TreeTopology, m: int, L: int, d: int = 2) -> list[NodeShape]:
    """Shape of every node tensor, bottom layer first."""
    shapes = []
    b = topology.branching
    top = topology.layers - 1
    for t, n in enumerate(topology.layer_sizes):
        in_dim = d if t == 0 else m
        out_dim = L if t == top else m
        shapes.extend(NodeShape(t + 1, out_dim, (in_dim,) * b) for _ in range(n))
    return shapes


def _prod(xs) -> int:
    p = 1
    for x in xs:
        p *= x
    return p


def dense_params(shape: NodeShape) -> int:
    return shape.out_dim * _prod(shape.in_dims)


def cp_params(shape: NodeShape, r: int) -> int:
    return r * (shape.out_dim + sum(shape.in_dims))


def dense_multiplies(shape: NodeShape) -> int:
    # legs absorbed one at a time, last leg first
    total = 0
    for j in range(1, len(shape.in_dims) + 1):
        total += shape.out_dim * _prod(shape.in_dims[:j])
    return total


def cp_multiplies(shape: NodeShape, r: int) -> int:
    b = len(shape.in_dims)
    return r * (shape.out_dim + sum(shape.in_dims) + b - 1)


def param_count(topology: TreeTopology, m: int, r: int | None, L: int, d: int = 2) -> int:
    """Number of complex parameters; ``r=None`` means the full (dense) tree."""
    shapes = node_shapes(topology, m, L, d)
    if r is None:
        return sum(dense_params(s) for s in shapes)
    return sum(cp_params(s, r) for s in shapes)


def multiply_count(topology: TreeTopology, m: int, r: int | None, L: int, d: int = 2) -> int:
    """Complex multiplications needed to contract the tree for one image."""
    shapes = node_shapes(topology, m, L, d)
    if r is None:
        return sum(dense_multiplies(s) for s in shapes)
    return sum(cp_multiplies(s, r) for s in shapes)
