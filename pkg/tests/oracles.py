"""Independent reference implementations used as test oracles.

These deliberately avoid the package's solver code paths: plain numpy
loops, eigendecomposition square roots instead of Cholesky, re-sorting
instead of a single sorted pass.
"""
import itertools

import numpy as np

from physvd.losses import combined_loss
from physvd.netcore import activate


def loss_from_z(model, index, z, target, cfg):
    """Scalar loss of one sample as a function of layer ``index``'s linear output."""
    h = activate(model.layers[index].activation, z)
    for layer in model.layers[index + 1:]:
        h = activate(layer.activation, h @ layer.dense_weight.T + layer.bias)
    return combined_loss(h, target, cfg)


def straight_line_forward(model, x):
    h = np.array(x, dtype=np.float64)
    for layer in model.layers:
        w = layer.dense_weight
        z = np.array([sum(w[r, c] * h[c] for c in range(w.shape[1])) for r in range(w.shape[0])]) + layer.bias
        h = np.tanh(z) if layer.activation == "tanh" else z
    return h


def naive_greedy(sigma2, costs, budget):
    """Budgeted greedy selection that re-scans the remaining candidates each step."""
    remaining = {(l, i) for l, s in enumerate(sigma2) for i in range(len(s))}
    ranks = [0] * len(sigma2)
    spent = 0
    while remaining:
        best = None
        for l, i in remaining:
            v = sigma2[l][i] / costs[l]
            key = (v, -l, -i)
            if best is None or key > best[0]:
                best = (key, l, i)
        _, l, i = best
        remaining.remove((l, i))
        if spent + costs[l] <= budget:
            ranks[l] += 1
            spent += costs[l]
    return ranks, spent


def exhaustive_best(sigma2, costs, budget):
    """Largest retained score over every feasible prefix-rank vector."""
    best = -1.0
    for ks in itertools.product(*[range(len(s) + 1) for s in sigma2]):
        if sum(k * c for k, c in zip(ks, costs)) <= budget:
            best = max(best, sum(float(np.sum(s[:k])) for s, k in zip(sigma2, ks)))
    return best


def sym_sqrt(s):
    lam, u = np.linalg.eigh(0.5 * (s + s.T))
    return (u * np.sqrt(np.clip(lam, 0, None))) @ u.T, (u / np.sqrt(lam)) @ u.T


def base_model_compress(model, x, ranks):
    """Sequential minimiser of E||WX - W'X||^2 + E||WX - W'X'||^2, rank k per layer.

    Writing S = (Sxx + Sx'x')/2 and C = (Sxx + E[X'X^T])/2 the objective is
    ||W' S^1/2 - W C^T S^-1/2||^2 + const, solved by truncating W C^T S^-1/2.
    """
    clean = pert = np.asarray(x, dtype=np.float64)
    weights = []
    n = clean.shape[0]
    for layer, k in zip(model.layers, ranks):
        w = layer.dense_weight
        sxx = clean.T @ clean / n
        s = 0.5 * (sxx + pert.T @ pert / n)
        c = 0.5 * (sxx + pert.T @ clean / n)
        half, inv_half = sym_sqrt(s)
        u, sv, vt = np.linalg.svd(w @ c.T @ inv_half)
        wn = (u[:, :k] * sv[:k]) @ vt[:k] @ inv_half
        weights.append(wn)
        clean = activate(layer.activation, clean @ w.T + layer.bias)
        pert = activate(layer.activation, pert @ wn.T + layer.bias)
    return weights
