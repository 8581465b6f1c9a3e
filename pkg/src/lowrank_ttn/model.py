"""TTN classifier model: pixel embedding, layered contraction, Born rule.

Node tensors are stored stacked per layer so a whole layer is contracted
with a few batched matrix products. Feature arrays are laid out as
``(nodes, batch, dim)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dropout import DropoutMask
from .errors import DegenerateOutputError, DomainError, ShapeError, UsageError
from .tensors import DTYPE, CPTensor, DenseTensor
from .topology import TreeTopology

#: squared decision-vector norms below this are treated as degenerate
NORM_FLOOR = 1e-30

# upper bound on elements of the per-chunk outer-product buffer for dense layers
_DENSE_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class FeatureMapSpec:
    d: int = 2

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"local feature dimension must be >= 2, got {self.d}")


def pixel_features(x, spec: FeatureMapSpec = FeatureMapSpec()) -> np.ndarray:
    """Embed pixel values in [0, 1]; output has a trailing axis of length d.

    For d = 2 this is (cos(pi x / 2), sin(pi x / 2)); larger d uses the
    binomially weighted powers sqrt(C(d-1, s-1)) cos^(d-s) sin^(s-1).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and (np.isnan(x).any() or x.min() < 0.0 or x.max() > 1.0):
        bad = x[(x < 0.0) | (x > 1.0) | np.isnan(x)].ravel()[0]
        raise DomainError(f"pixel values must lie in [0, 1], got {bad!r}")
    c = np.cos(0.5 * np.pi * x)
    s = np.sin(0.5 * np.pi * x)
    d = spec.d
    if d == 2:
        out = np.stack([c, s], axis=-1)
    else:
        powers = np.arange(d)
        weights = np.sqrt([math.comb(d - 1, int(k)) for k in powers])
        out = weights * c[..., None] ** (d - 1 - powers) * s[..., None] ** powers
    return out.astype(DTYPE)


def pixel_feature_map(x: float, spec: FeatureMapSpec = FeatureMapSpec()) -> np.ndarray:
    return pixel_features(float(x), spec)


@dataclass(eq=False)
class CPLayer:
    """All CP node tensors of one layer.

    ``out_factors``: (nodes, r, out_dim); ``in_factors``: (nodes, b, r, in_dim).
    """

    out_factors: np.ndarray
    in_factors: np.ndarray

    @property
    def params(self) -> list[np.ndarray]:
        return [self.out_factors, self.in_factors]

    def node(self, i: int) -> CPTensor:
        return CPTensor(self.out_factors[i], tuple(self.in_factors[i]))


@dataclass(eq=False)
class DenseLayer:
    """All dense node tensors of one layer, shape (nodes, out_dim, in_dim, ..., in_dim)."""

    weights: np.ndarray

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights]

    def node(self, i: int) -> DenseTensor:
        return DenseTensor(self.weights[i])


@dataclass(eq=False)
class TTNModel:
    topology: TreeTopology
    kind: str
    bond_dim: int
    num_classes: int
    layers: list
    rank: int | None = None
    feature_map: FeatureMapSpec = field(default_factory=FeatureMapSpec)

    def __post_init__(self):
        if self.kind not in ("cp", "dense"):
            raise ValueError(f"model kind must be 'cp' or 'dense', got {self.kind!r}")
        if len(self.layers) != self.topology.layers:
            raise ShapeError(f"model has {len(self.layers)} layers, topology has {self.topology.layers}")
        b = self.topology.branching
        top = self.topology.layers - 1
        for t, (layer, n) in enumerate(zip(self.layers, self.topology.layer_sizes)):
            in_dim = self.feature_map.d if t == 0 else self.bond_dim
            out_dim = self.num_classes if t == top else self.bond_dim
            if self.kind == "cp":
                want = [(n, self.rank, out_dim), (n, b, self.rank, in_dim)]
            else:
                want = [(n, out_dim) + (in_dim,) * b]
            got = [p.shape for p in layer.params]
            if got != want:
                raise ShapeError(f"layer {t + 1}: parameter shapes {got}, expected {want}")

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def node_tensor(self, layer: int, i: int) -> DenseTensor | CPTensor:
        """Node ``i`` of ``layer`` (0-based) as an immutable tensor value."""
        return self.layers[layer].node(i)

    def node_tensors(self) -> list[DenseTensor | CPTensor]:
        return [layer.node(i) for layer, n in zip(self.layers, self.topology.layer_sizes) for i in range(n)]

    def copy(self) -> "TTNModel":
        if self.kind == "cp":
            layers = [CPLayer(l.out_factors.copy(), l.in_factors.copy()) for l in self.layers]
        else:
            layers = [DenseLayer(l.weights.copy()) for l in self.layers]
        return TTNModel(self.topology, self.kind, self.bond_dim, self.num_classes, layers, self.rank, self.feature_map)

    @classmethod
    def from_node_tensors(cls, topology: TreeTopology, tensors, feature_map: FeatureMapSpec = FeatureMapSpec()):
        """Assemble a model from per-node tensors listed bottom layer first."""
        tensors = list(tensors)
        if len(tensors) != topology.num_nodes:
            raise ShapeError(f"expected {topology.num_nodes} node tensors, got {len(tensors)}")
        if all(isinstance(t, CPTensor) for t in tensors):
            kind = "cp"
        elif all(isinstance(t, DenseTensor) for t in tensors):
            kind = "dense"
        else:
            raise UsageError("node tensors must be all dense or all CP")
        layers, pos = [], 0
        for n in topology.layer_sizes:
            group = tensors[pos:pos + n]
            pos += n
            if kind == "cp":
                layers.append(CPLayer(np.stack([t.out_factors for t in group]),
                                      np.stack([np.stack(t.in_factors) for t in group])))
            else:
                layers.append(DenseLayer(np.stack([t.entries for t in group])))
        top = tensors[-1]
        bond = tensors[0].out_dim if topology.layers > 1 else 1
        rank = top.rank if kind == "cp" else None
        return cls(topology, kind, bond, top.out_dim, layers, rank, feature_map)


@dataclass
class ForwardCache:
    """Intermediates kept by ``forward_batch`` for the reverse pass."""

    inputs: list = field(default_factory=list)  # gathered children per layer, (n, b, B, dim)
    psi: list = field(default_factory=list)  # CP leg overlaps, (n, b, B, r)
    products: list = field(default_factory=list)  # weighted term products, (n, B, r)
    scales: list = field(default_factory=list)  # power-of-two rescaling per node output, (n, B)
    weights: list = field(default_factory=list)  # dropout term weights per layer or None


@dataclass
class BatchOutput:
    """Decision vectors up to a positive per-image factor.

    The exact decision vector of image ``s`` is ``f[s] * 2**log2_scale[s]``;
    Born probabilities and predictions only need ``f``.
    """

    f: np.ndarray
    log2_scale: np.ndarray
    cache: ForwardCache | None = None

    def exact(self) -> np.ndarray:
        return self.f * np.exp2(self.log2_scale.astype(np.float64))[:, None]


def _normalize(out: np.ndarray):
    # divide each node output by a power of two near its norm: exact in
    # floating point and leaves Born probabilities untouched
    nrm = np.sqrt(np.sum(out.real ** 2 + out.imag ** 2, axis=-1))
    _, expo = np.frexp(nrm)
    scale = np.ldexp(1.0, -expo)
    return out * scale[..., None], scale, expo


def _cp_layer_forward(layer: CPLayer, x: np.ndarray, weights):
    psi = x @ np.swapaxes(layer.in_factors, -1, -2)
    prod = psi[:, 0]
    for j in range(1, psi.shape[1]):
        prod = prod * psi[:, j]
    if weights is not None:
        prod = prod * weights[:, None, :]
    return prod @ layer.out_factors, psi, prod


def _outer_children(x: np.ndarray) -> np.ndarray:
    """Row-major outer product of the b child vectors: (n, b, B, d) -> (n, B, d**b)."""
    phi = x[:, 0]
    for j in range(1, x.shape[1]):
        phi = (phi[..., :, None] * x[:, j][..., None, :]).reshape(phi.shape[0], phi.shape[1], -1)
    return phi


def _dense_chunk(n_nodes: int, width: int, batch: int) -> int:
    return max(1, min(batch, _DENSE_CHUNK_ELEMENTS // max(1, n_nodes * width)))


def _dense_layer_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    n, out_dim = layer.weights.shape[:2]
    w = layer.weights.reshape(n, out_dim, -1)
    batch = x.shape[2]
    step = _dense_chunk(n, w.shape[2], batch)
    out = np.empty((n, batch, out_dim), dtype=DTYPE)
    for lo in range(0, batch, step):
        out[:, lo:lo + step] = _outer_children(x[:, :, lo:lo + step]) @ np.swapaxes(w, 1, 2)
    return out


def forward_batch(model: TTNModel, images, mask: DropoutMask | None = None, keep_cache: bool = False) -> BatchOutput:
    """Contract the tree for a batch of images of shape (B, N) with pixels in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 1:
        images = images[None, :]
    if images.ndim != 2 or images.shape[1] != model.topology.num_pixels:
        raise ShapeError(
            f"images must have shape (batch, {model.topology.num_pixels}), got {images.shape}"
        )
    if mask is not None:
        mask.check_compatible(model)
    feats = np.ascontiguousarray(np.swapaxes(pixel_features(images, model.feature_map), 0, 1))
    cache = ForwardCache() if keep_cache else None
    log2 = np.zeros(images.shape[0], dtype=np.int64)
    top = model.topology.layers - 1
    for t, (layer, children) in enumerate(zip(model.layers, model.topology.node_children)):
        x = feats[children]
        weights = mask.term_weights(t) if mask is not None else None
        if model.kind == "cp":
            out, psi, prod = _cp_layer_forward(layer, x, weights)
        else:
            out, psi, prod = _dense_layer_forward(layer, x), None, None
        if t == top:
            scale = None
            feats = out
        else:
            feats, scale, expo = _normalize(out)
            log2 += expo.sum(axis=0)
        if cache is not None:
            cache.inputs.append(x)
            cache.psi.append(psi)
            cache.products.append(prod)
            cache.scales.append(scale)
            cache.weights.append(weights)
    return BatchOutput(feats[0], log2, cache)


def forward(model: TTNModel, image, mask: DropoutMask | None = None) -> np.ndarray:
    """Exact decision vector f(x) = W . Phi(x) for one image."""
    image = np.asarray(image, dtype=np.float64).ravel()
    return forward_batch(model, image[None, :], mask).exact()[0]


def _check_floor(norm_sq, f):
    bad = np.flatnonzero(~(norm_sq >= NORM_FLOOR))
    if bad.size:
        s = int(bad[0])
        raise DegenerateOutputError(
            f"decision vector norm^2 {norm_sq[s]:.3g} is below {NORM_FLOOR:g} for sample {s};"
            " the model output has collapsed (consider a norm penalty)",
            sample=s if f.ndim == 2 else None,
        )


def born_probabilities(f) -> np.ndarray:
    """p_l = |f_l|^2 / ||f||^2 along the last axis."""
    f = np.asarray(f, dtype=DTYPE)
    sq = f.real ** 2 + f.imag ** 2
    norm_sq = sq.sum(axis=-1)
    _check_floor(np.atleast_1d(norm_sq), f)
    return sq / norm_sq[..., None]


def predict(f) -> int | np.ndarray:
    """Class with the largest Born probability, 1-based; ties go to the lower class."""
    p = born_probabilities(f)
    return np.argmax(p, axis=-1) + 1 if p.ndim > 1 else int(np.argmax(p)) + 1
