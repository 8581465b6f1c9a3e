"""Layered tree graphs over image pixels."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TOPOLOGY_KINDS = ("1d-b2", "2d-b2-alternating", "2d-b4")  # plus 1d-bK for any K >= 2


@dataclass(frozen=True, eq=False)
class TreeTopology:
    """Children of every node, layer by layer.

    ``node_children[0]`` has shape ``(N / b, b)`` and holds pixel indices
    (row-major over ``image_shape``); ``node_children[t]`` for ``t >= 1``
    holds node indices of layer ``t - 1``. The last layer has one node.
    """

    kind: str
    branching: int
    image_shape: tuple
    node_children: tuple

    @property
    def layers(self) -> int:
        return len(self.node_children)

    @property
    def num_pixels(self) -> int:
        return int(np.prod(self.image_shape))

    @property
    def layer_sizes(self) -> list[int]:
        return [c.shape[0] for c in self.node_children]

    @property
    def num_nodes(self) -> int:
        return sum(self.layer_sizes)

    def validate(self) -> None:
        b = self.branching
        if b < 2:
            raise ConfigError(f"branching ratio must be at least 2, got {b}")
        prev = self.num_pixels
        for t, ch in enumerate(self.node_children):
            if ch.ndim != 2 or ch.shape[1] != b:
                raise ConfigError(f"layer {t + 1}: children array must have shape (n, {b})")
            if ch.shape[0] * b != prev:
                raise ConfigError(f"layer {t + 1} has {ch.shape[0]} nodes for {prev} inputs")
            if not np.array_equal(np.sort(ch.ravel()), np.arange(prev)):
                raise ConfigError(f"layer {t + 1}: every input must appear exactly once")
            prev = ch.shape[0]
        if prev != 1:
            raise ConfigError(f"top layer must have exactly one node, got {prev}")


def _log2_exact(n: int, what: str) -> int:
    if n < 1 or n & (n - 1):
        raise ConfigError(f"{what} must be a power of two, got {n}")
    return n.bit_length() - 1


def _merge_grid(grid: np.ndarray, fy: int, fx: int) -> np.ndarray:
    """Children of the coarse grid obtained by merging fy x fx blocks.

    ``grid`` holds the index of each fine-level input at its position;
    children of a coarse cell are listed in raster order within the block
    and coarse cells are numbered in raster order.
    """
    h, w = grid.shape
    blocks = grid.reshape(h // fy, fy, w // fx, fx).transpose(0, 2, 1, 3)
    return blocks.reshape((h // fy) * (w // fx), fy * fx)


def build_topology(kind: str, image_shape) -> TreeTopology:
    """Build one of the supported uniform trees.

    ``1d-bK`` groups runs of ``K`` neighbours of a length-``K**T`` vector
    (``1d-b2`` is the binary case); ``2d-b4`` merges
    disjoint 2x2 patches of a ``2**T`` square image; ``2d-b2-alternating``
    halves the x (column) direction first, then y, and so on.
    """
    if isinstance(image_shape, int):
        image_shape = (image_shape,)
    image_shape = tuple(int(s) for s in image_shape)
    layers = []
    match = re.fullmatch(r"1d-b(\d+)", kind)
    if match:
        b = int(match.group(1))
        if b < 2:
            raise ConfigError(f"branching ratio must be at least 2, got {b}")
        if len(image_shape) != 1:
            raise ConfigError(f"{kind} needs a 1D image shape (N,)")
        (n,) = image_shape
        if n < b:
            raise ConfigError(f"{kind} needs N = {b}**T with T >= 1, got N={n}")
        while n > 1:
            if n % b:
                raise ConfigError(f"{kind} needs N to be a power of {b}, got {image_shape[0]}")
            layers.append(np.arange(n).reshape(n // b, b))
            n //= b
    elif kind == "2d-b4":
        if len(image_shape) != 2 or image_shape[0] != image_shape[1]:
            raise ConfigError(f"2d-b4 needs a square image of side 2**T, got {image_shape}")
        side = image_shape[0]
        t = _log2_exact(side, "image side for 2d-b4")
        if t < 1:
            raise ConfigError("2d-b4 needs an image side of at least 2")
        for _ in range(t):
            layers.append(_merge_grid(np.arange(side * side).reshape(side, side), 2, 2))
            side //= 2
        b = 4
    elif kind == "2d-b2-alternating":
        if len(image_shape) != 2:
            raise ConfigError("2d-b2-alternating needs a 2D image shape (Ny, Nx)")
        h, w = image_shape
        _log2_exact(h, "image height for 2d-b2-alternating")
        _log2_exact(w, "image width for 2d-b2-alternating")
        if h * w < 2:
            raise ConfigError("2d-b2-alternating needs at least 2 pixels")
        along_x = True
        while h * w > 1:
            if (along_x and w > 1) or h == 1:
                layers.append(_merge_grid(np.arange(h * w).reshape(h, w), 1, 2))
                w //= 2
            else:
                layers.append(_merge_grid(np.arange(h * w).reshape(h, w), 2, 1))
                h //= 2
            along_x = not along_x
        b = 2
    else:
        raise ConfigError(f"unknown topology kind {kind!r}; expected one of {', '.join(TOPOLOGY_KINDS)}")
    topo = TreeTopology(kind, b, image_shape, tuple(np.ascontiguousarray(c) for c in layers))
    topo.validate()
    return topo
