"""Negative log-likelihood, reverse-mode gradients, and the training loop.

Gradients are returned in the packed complex form ``dJ/dRe + i dJ/dIm``
(twice the Wirtinger derivative dJ/d conj(z)). With that convention the
reverse pass through a holomorphic linear map ``y = A x`` is simply
``g_x = conj(A)^T g_y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step
from .dropout import DropoutMask, sample_dropout_mask
from .errors import ConfigError, DegenerateOutputError, DivergenceError
from .model import (
    NORM_FLOOR,
    CPLayer,
    DenseLayer,
    FeatureMapSpec,
    TTNModel,
    _dense_chunk,
    _outer_children,
    forward_batch,
)
from .tensors import DTYPE
from .topology import TreeTopology


@dataclass
class TrainConfig:
    learn_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    init_std: float = 0.4
    dropout_rate: float = 0.0
    penalty: float = 0.0
    batch_size: int = 250
    epochs: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("learn_rate", "beta1", "beta2", "adam_eps", "init_std", "dropout_rate", "penalty"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and nonnegative, got {value}")
        if self.dropout_rate >= 1.0:
            raise ConfigError(f"dropout_rate must be < 1, got {self.dropout_rate}")
        if not (self.beta1 < 1.0 and self.beta2 < 1.0):
            raise ConfigError("Adam decay factors must be < 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")


@dataclass
class LossReport:
    nll: float
    penalty: float
    accuracy: float
    epoch: int = 0
    batch: int = 0

    @property
    def objective(self) -> float:
        return self.nll + self.penalty


def initialize_model(
    topology: TreeTopology,
    m: int,
    L: int,
    kind: str,
    r: int | None,
    rng: np.random.Generator,
    init_std: float = 0.4,
    feature_map: FeatureMapSpec = FeatureMapSpec(),
) -> TTNModel:
    """Random model with i.i.d. Normal(0, init_std) real and imaginary parts."""

    def draw(shape):
        parts = rng.normal(0.0, init_std, size=tuple(shape) + (2,))
        return np.ascontiguousarray(parts).view(DTYPE)[..., 0]

    if kind == "cp" and (r is None or r < 1):
        raise ConfigError(f"a CP model needs rank r >= 1, got {r}")
    b = topology.branching
    top = topology.layers - 1
    layers = []
    for t, n in enumerate(topology.layer_sizes):
        in_dim = feature_map.d if t == 0 else m
        out_dim = L if t == top else m
        if kind == "cp":
            layers.append(CPLayer(draw((n, r, out_dim)), draw((n, b, r, in_dim))))
        elif kind == "dense":
            layers.append(DenseLayer(draw((n, out_dim) + (in_dim,) * b)))
        else:
            raise ConfigError(f"model kind must be 'cp' or 'dense', got {kind!r}")
    return TTNModel(topology, kind, m, L, layers, r if kind == "cp" else None, feature_map)


# -- norm penalty ---------------------------------------------------------


def _cp_grams(layer: CPLayer):
    out = layer.out_factors.conj() @ np.swapaxes(layer.out_factors, 1, 2)
    legs = layer.in_factors.conj() @ np.swapaxes(layer.in_factors, 2, 3)
    return out, legs


def norm_penalty(model: TTNModel) -> float:
    """Sum of squared Frobenius norms of all node tensors (not weighted by gamma)."""
    total = 0.0
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            w = layer.weights
            total += float(np.sum(w.real ** 2 + w.imag ** 2))
        else:
            g_out, g_legs = _cp_grams(layer)
            h = g_out * np.prod(g_legs, axis=1)
            total += float(h.sum().real)
    return total


def _penalty_grads(model: TTNModel, gamma: float) -> list[np.ndarray]:
    grads = []
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            grads.append(2.0 * gamma * layer.weights)
            continue
        g_out, g_legs = _cp_grams(layer)
        b = g_legs.shape[1]
        grads.append(2.0 * gamma * (np.prod(g_legs, axis=1) @ layer.out_factors))
        leg_grads = np.empty_like(layer.in_factors)
        for j in range(b):
            h = g_out.copy()
            for i in range(b):
                if i != j:
                    h = h * g_legs[:, i]
            leg_grads[:, j] = 2.0 * gamma * (h @ layer.in_factors[:, j])
        grads.append(leg_grads)
    return grads


# -- loss and reverse pass ------------------------------------------------


def _labels0(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels[None]
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise ConfigError(f"labels must lie in 1..{num_classes}")
    return labels.astype(np.int64) - 1


def _nll_terms(f: np.ndarray, lab: np.ndarray):
    sq = f.real ** 2 + f.imag ** 2
    norm_sq = sq.sum(axis=1)
    bad = np.flatnonzero(~(norm_sq >= NORM_FLOOR))
    if bad.size:
        s = int(bad[0])
        raise DegenerateOutputError(
            f"sample {s}: decision vector norm^2 {norm_sq[s]:.3g} below {NORM_FLOOR:g}", sample=s
        )
    rows = np.arange(f.shape[0])
    target_sq = sq[rows, lab]
    with np.errstate(divide="ignore"):
        nll = np.log(norm_sq) - np.log(target_sq)
    correct = np.argmax(sq, axis=1) == lab
    return nll, norm_sq, target_sq, correct


def _backward(model: TTNModel, cache, g_top: np.ndarray) -> list[np.ndarray]:
    """Reverse pass from the (scaled) top output cotangent, shape (B, L)."""
    grads_per_layer = [None] * len(model.layers)
    g = g_top[None]
    for t in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[t]
        x = cache.inputs[t]
        if cache.scales[t] is not None:
            g = g * cache.scales[t][..., None]
        if isinstance(layer, CPLayer):
            psi, prod, w = cache.psi[t], cache.products[t], cache.weights[t]
            g_outf = np.swapaxes(prod.conj(), 1, 2) @ g
            g_prod = g @ np.swapaxes(layer.out_factors.conj(), 1, 2)
            if w is not None:
                g_prod = g_prod * w[:, None, :]
            b = psi.shape[1]
            # products of the other legs' overlaps via prefix/suffix scans
            prefix = [None] * b
            acc = None
            for j in range(b):
                prefix[j] = acc
                acc = psi[:, j] if acc is None else acc * psi[:, j]
            g_psi = np.empty_like(psi)
            acc = None
            for j in range(b - 1, -1, -1):
                others = prefix[j] if acc is None else (acc if prefix[j] is None else prefix[j] * acc)
                g_psi[:, j] = g_prod if others is None else g_prod * others.conj()
                acc = psi[:, j] if acc is None else acc * psi[:, j]
            g_in = np.swapaxes(g_psi, 2, 3) @ x.conj()
            grads_per_layer[t] = [g_outf, g_in]
            if t > 0:
                g_x = g_psi @ layer.in_factors.conj()
        else:
            g_w, g_x = _dense_backward(layer, x, g, need_inputs=t > 0)
            grads_per_layer[t] = [g_w]
        if t > 0:
            children = model.topology.node_children[t]
            g_prev = np.empty((model.topology.layer_sizes[t - 1],) + g_x.shape[2:], dtype=DTYPE)
            g_prev[children] = g_x
            g = g_prev
    return [a for pair in grads_per_layer for a in pair]


def _dense_backward(layer: DenseLayer, x: np.ndarray, g: np.ndarray, need_inputs: bool):
    n, out_dim = layer.weights.shape[:2]
    b, batch, d = x.shape[1], x.shape[2], x.shape[3]
    w = layer.weights.reshape(n, out_dim, -1)
    g_w = np.zeros_like(w)
    g_x = np.empty_like(x) if need_inputs else None
    letters = "abcdefghijklm"[:b]
    step = _dense_chunk(n, w.shape[2], batch)
    for lo in range(0, batch, step):
        xs = x[:, :, lo:lo + step]
        gs = g[:, lo:lo + step]
        phi = _outer_children(xs)
        g_w += np.swapaxes(gs, 1, 2) @ phi.conj()
        if need_inputs:
            g_phi = (gs @ w.conj()).reshape((n, gs.shape[1]) + (d,) * b)
            xc = xs.conj()
            for j in range(b):
                operands = [g_phi] + [xc[:, i] for i in range(b) if i != j]
                subs = [f"ns{letters}"] + [f"ns{letters[i]}" for i in range(b) if i != j]
                g_x[:, j, lo:lo + step] = np.einsum(
                    ",".join(subs) + f"->ns{letters[j]}", *operands, optimize=True
                )
    return g_w.reshape(layer.weights.shape), g_x


def objective_and_gradients(
    model: TTNModel,
    images,
    labels,
    mask: DropoutMask | None = None,
    gamma: float = 0.0,
    data_weight: float = 1.0,
):
    """Objective ``data_weight * NLL + gamma * sum ||A||^2`` and its gradient.

    Returns ``(grads, report)`` where ``grads`` is aligned with
    ``model.params``.
    """
    out = forward_batch(model, images, mask, keep_cache=True)
    lab = _labels0(labels, model.num_classes)
    f = out.f
    nll, norm_sq, target_sq, correct = _nll_terms(f, lab)
    batch = f.shape[0]
    rows = np.arange(batch)
    g_top = f / norm_sq[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        g_top[rows, lab] -= f[rows, lab] / target_sq
    g_top *= 2.0 * data_weight / batch
    grads = _backward(model, out.cache, g_top)
    pen = 0.0
    if gamma > 0:
        pen = gamma * norm_penalty(model)
        for g, gp in zip(grads, _penalty_grads(model, gamma)):
            g += gp
    report = LossReport(float(nll.mean()), pen, float(correct.mean()))
    return grads, report


def gradients(model, images, labels, mask=None, gamma: float = 0.0) -> list[np.ndarray]:
    return objective_and_gradients(model, images, labels, mask, gamma)[0]


def nll_loss(model: TTNModel, images, labels, mask: DropoutMask | None = None, gamma: float = 0.0) -> LossReport:
    out = forward_batch(model, images, mask)
    nll, _, _, correct = _nll_terms(out.f, _labels0(labels, model.num_classes))
    pen = gamma * norm_penalty(model) if gamma > 0 else 0.0
    return LossReport(float(nll.mean()), pen, float(correct.mean()))


# -- evaluation -----------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    correct: int
    total: int
    degenerate: int
    confusion: np.ndarray = field(repr=False)  # rows: true class, cols: predicted (0 = degenerate)


def evaluate(model: TTNModel, images, labels, chunk: int = 2000) -> EvalReport:
    """Classification accuracy with dropout off; degenerate outputs count as wrong."""
    images = np.asarray(images)
    lab = _labels0(labels, model.num_classes)
    L = model.num_classes
    confusion = np.zeros((L, L + 1), dtype=np.int64)
    degenerate = 0
    for lo in range(0, images.shape[0], chunk):
        f = forward_batch(model, images[lo:lo + chunk]).f
        sq = f.real ** 2 + f.imag ** 2
        ok = sq.sum(axis=1) >= NORM_FLOOR
        pred = np.where(ok, np.argmax(sq, axis=1) + 1, 0)
        degenerate += int((~ok).sum())
        np.add.at(confusion, (lab[lo:lo + chunk], pred), 1)
    total = int(lab.size)
    correct = int(np.trace(confusion[:, 1:]))
    return EvalReport(correct / total if total else 0.0, correct, total, degenerate, confusion)


def evaluate_accuracy(model: TTNModel, images, labels) -> float:
    return evaluate(model, images, labels).accuracy


# -- training loop --------------------------------------------------------


def _check_finite(report: LossReport, grads, epoch: int, batch: int) -> None:
    if not (math.isfinite(report.nll) and math.isfinite(report.penalty)) or not all(
        np.all(np.isfinite(g)) for g in grads
    ):
        raise DivergenceError(
            f"epoch {epoch}, batch {batch}: non-finite loss or gradient;"
            " the tensor elements are diverging, try a norm penalty gamma > 0"
        )


def train_step(model, images, labels, config: TrainConfig, state: AdamState, rng, epoch=0, batch=0) -> LossReport:
    mask = sample_dropout_mask(model, config.dropout_rate, rng) if config.dropout_rate > 0 else None
    try:
        grads, report = objective_and_gradients(model, images, labels, mask, config.penalty)
    except DegenerateOutputError as exc:
        raise DivergenceError(f"epoch {epoch}, batch {batch}: {exc}") from exc
    report.epoch, report.batch = epoch, batch
    _check_finite(report, grads, epoch, batch)
    adam_step(model.params, grads, state, config)
    return report


def train_epoch(
    model: TTNModel,
    images,
    labels,
    config: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
    epoch: int = 1,
    on_batch=None,
):
    """One shuffled pass over the data with a fresh dropout mask per batch.

    ``on_batch(batch_index, num_batches, report)`` is called after every
    update. Returns ``(model, state, reports)``; the model is updated in place.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    n = images.shape[0]
    if n == 0:
        raise ConfigError("training set is empty")
    order = rng.permutation(n)
    num_batches = -(-n // config.batch_size)
    reports = []
    for k in range(num_batches):
        idx = order[k * config.batch_size:(k + 1) * config.batch_size]
        report = train_step(model, images[idx], labels[idx], config, state, rng, epoch, k + 1)
        reports.append(report)
        if on_batch is not None:
            on_batch(k + 1, num_batches, report)
    return model, state, reports


def train(model, images, labels, config: TrainConfig, state: AdamState | None = None, rng=None):
    """Run ``config.epochs`` epochs; returns ``(model, state, reports)``."""
    if state is None:
        state = AdamState.zeros_like(model.params)
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    reports = []
    for epoch in range(1, config.epochs + 1):
        _, _, rep = train_epoch(model, images, labels, config, state, rng, epoch)
        reports.extend(rep)
    return model, state, reports
