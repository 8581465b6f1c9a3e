"""Reference computations that share no code with the library's fast paths."""
import itertools
import math

import numpy as np


def dense_contract_loops(entries, children):
    """Element-by-element evaluation of sum_I A[mu, I] prod_n x_n[i_n]."""
    entries = np.asarray(entries)
    out = np.zeros(entries.shape[0], dtype=complex)
    for mu in range(entries.shape[0]):
        for idx in itertools.product(*(range(k) for k in entries.shape[1:])):
            term = entries[(mu,) + idx]
            for n, i in enumerate(idx):
                term = term * children[n][i]
            out[mu] += term
    return out


def cp_expand(out_factors, in_factors):
    """Dense entries of a CP tensor via explicit einsum outer products."""
    letters = "abcdefgh"
    b = len(in_factors)
    spec = "ka," + ",".join(f"k{letters[1 + n]}" for n in range(b)) + "->a" + letters[1:1 + b]
    return np.einsum(spec, out_factors, *in_factors)


def feature_vector(x, d=2):
    c, s = math.cos(math.pi * x / 2), math.sin(math.pi * x / 2)
    return np.array([math.sqrt(math.comb(d - 1, k)) * c ** (d - 1 - k) * s ** k for k in range(d)], dtype=complex)


def decision_matrix(model):
    """Materialize W as an (L, d**N) matrix acting on the kron of pixel features in pixel order."""
    topo = model.topology
    d = model.feature_map.d

    def node_dense(t, i):
        layer = model.layers[t]
        if model.kind == "cp":
            return cp_expand(layer.out_factors[i], list(layer.in_factors[i]))
        return np.asarray(layer.weights[i])

    maps = []  # per node of the current layer: (matrix, leaf pixel list)
    for i, ch in enumerate(topo.node_children[0]):
        a = node_dense(0, i)
        maps.append((a.reshape(a.shape[0], -1), list(ch)))
    for t in range(1, topo.layers):
        new = []
        for i, ch in enumerate(topo.node_children[t]):
            a = node_dense(t, i)
            kron = np.ones((1, 1), dtype=complex)
            leaves = []
            for c in ch:
                mat, lv = maps[c]
                kron = np.kron(kron, mat)
                leaves += lv
            new.append((a.reshape(a.shape[0], -1) @ kron, leaves))
        maps = new
    (w, leaves), = maps
    n = len(leaves)
    w = w.reshape((w.shape[0],) + (d,) * n)
    # axis 1 + j currently belongs to pixel leaves[j]; reorder to pixel order
    perm = [0] + [1 + leaves.index(p) for p in range(n)]
    return w.transpose(perm).reshape(w.shape[0], -1)


def embed_full(image, d=2):
    phi = np.ones(1, dtype=complex)
    for x in image:
        phi = np.kron(phi, feature_vector(x, d))
    return phi


def finite_difference_grads(objective, params, h=1e-6):
    """Central differences of ``objective()`` w.r.t. every real/imag component, packed as complex."""
    grads = []
    for p in params:
        flat = p.view(np.float64).reshape(-1)
        g = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = objective()
            flat[k] = orig - h
            down = objective()
            flat[k] = orig
            g[k] = (up - down) / (2 * h)
        grads.append(g.view(complex).reshape(p.shape))
    return grads


def max_relative_error(analytic, numeric):
    """max |a - n| over all components, relative to the largest numeric component."""
    num = max(float(np.max(np.abs(g.view(np.float64)))) for g in numeric)
    diff = max(float(np.max(np.abs((a - g).view(np.float64)))) for a, g in zip(analytic, numeric))
    return diff / num if num > 0 else diff
