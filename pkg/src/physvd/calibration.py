"""Per-layer calibration statistics: clean input covariances, output Fisher
matrices, clean/perturbed pair covariances and trace-based balancing across
dataset groups.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError
from .fields import Dataset
from .losses import LossConfig
from .netcore import SequentialModel, activate, backward, forward

CHUNK = 64
TRACE_EPS = 1e-15


@dataclass(frozen=True)
class LayerStats:
    sigma_xx: np.ndarray
    fisher_z: np.ndarray
    n_samples: int
    dataset_tag: str = "all"


@dataclass(frozen=True)
class PairStats:
    sigma_xpx: np.ndarray  # E[X' X^T], not symmetric in general
    sigma_xpxp: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class BalancedStats:
    layers: list[LayerStats]
    scale_x: dict[str, list[float]] = field(default_factory=dict)
    scale_f: dict[str, list[float]] = field(default_factory=dict)


def _chunks(n: int, size: int = CHUNK):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _reduce(parts, deterministic: bool, workers: int, fn):
    """Sum ``fn(part)`` over parts; fixed order unless ``deterministic`` is off."""
    if deterministic or workers <= 1:
        acc = None
        for p in parts:
            r = fn(p)
            acc = r if acc is None else [a + b for a, b in zip(acc, r)]
        return acc
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, parts))
    acc = None
    for r in reversed(results):
        acc = r if acc is None else [a + b for a, b in zip(acc, r)]
    return acc


def _clean_group(model, x, y, loss_cfg, tag, deterministic, workers, offset):
    n = x.shape[0]

    def part(bounds):
        s, e = bounds
        tr = forward(model, x[s:e])
        gr = backward(model, tr, y[s:e], loss_cfg)
        out = []
        for i, (xi, gi) in enumerate(zip(tr.inputs_per_layer, gr.z_grads)):
            bad = ~np.all(np.isfinite(gi), axis=1)
            if bad.any():
                raise NumericalError(
                    f"non-finite gradient at sample {offset + s + int(np.argmax(bad))}, layer {i}"
                )
            out.append(xi.T @ xi)
            out.append(gi.T @ gi)
        return out

    sums = _reduce(_chunks(n), deterministic, workers, part)
    stats = []
    for i in range(len(model.layers)):
        sxx = sums[2 * i] / n
        fz = sums[2 * i + 1] / n
        stats.append(LayerStats(0.5 * (sxx + sxx.T), 0.5 * (fz + fz.T), n, tag))
    return stats


def accumulate_clean_stats(
    model: SequentialModel,
    dataset: Dataset,
    loss_cfg: LossConfig,
    deterministic: bool = True,
    workers: int = 1,
) -> dict[str, list[LayerStats]]:
    """Mean outer products of each layer's input and of the loss gradient at its
    linear output, one list of per-layer stats per dataset tag."""
    if len(dataset) == 0:
        raise ContractError("calibration dataset is empty")
    groups = {}
    for tag, sub in dataset.by_tag().items():
        offset = int(np.flatnonzero(dataset.tag_index == dataset.tag_names.index(tag))[0])
        groups[tag] = _clean_group(
            model, sub.flat_inputs, sub.flat_targets, loss_cfg, tag, deterministic, workers, offset
        )
    return groups


def pool_stats(groups: dict[str, list[LayerStats]]) -> list[LayerStats]:
    """Sample-weighted union of all groups (what a single pooled pass would give)."""
    tags = list(groups)
    if len(tags) == 1:
        return list(groups[tags[0]])
    n_layers = _check_layers(groups)
    total = sum(groups[t][0].n_samples for t in tags)
    out = []
    for i in range(n_layers):
        sxx = sum(groups[t][i].sigma_xx * groups[t][i].n_samples for t in tags) / total
        fz = sum(groups[t][i].fisher_z * groups[t][i].n_samples for t in tags) / total
        out.append(LayerStats(sxx, fz, total, "all"))
    return out


def _check_layers(groups) -> int:
    counts = {len(v) for v in groups.values()}
    if len(counts) != 1:
        raise ContractError(f"dataset groups cover different layer sets: {sorted(counts)}")
    n = counts.pop()
    for i in range(n):
        shapes = {g[i].sigma_xx.shape + g[i].fisher_z.shape for g in groups.values()}
        if len(shapes) != 1:
            raise ContractError(f"dataset groups disagree on layer {i} shapes")
    return n


def trace_scales(mats: list[np.ndarray]) -> list[float]:
    energy = [float(np.trace(m)) for m in mats]
    tau = max(energy)
    return [tau / e if e > TRACE_EPS else 1.0 for e in energy]


def balance_stats(groups: dict[str, list[LayerStats]]) -> BalancedStats:
    """Rescale every group to the largest per-layer trace, then average groups."""
    if not groups:
        raise ContractError("balance_stats needs at least one dataset group")
    n_layers = _check_layers(groups)
    tags = list(groups)
    scale_x = {t: [] for t in tags}
    scale_f = {t: [] for t in tags}
    layers = []
    for i in range(n_layers):
        sx = trace_scales([groups[t][i].sigma_xx for t in tags])
        sf = trace_scales([groups[t][i].fisher_z for t in tags])
        sxx = sum(s * groups[t][i].sigma_xx for s, t in zip(sx, tags)) / len(tags)
        fz = sum(s * groups[t][i].fisher_z for s, t in zip(sf, tags)) / len(tags)
        for t, a, b in zip(tags, sx, sf):
            scale_x[t].append(a)
            scale_f[t].append(b)
        layers.append(LayerStats(sxx, fz, sum(groups[t][i].n_samples for t in tags), "balanced"))
    return BalancedStats(layers, scale_x, scale_f)


def layer_inputs(model: SequentialModel, x: np.ndarray, upto: int) -> np.ndarray:
    """Activation entering layer ``upto`` (0-based) for a batch ``x``."""
    h = np.asarray(x, dtype=np.float64)
    for layer in model.layers[:upto]:
        h = activate(layer.activation, layer.linear(h))
    return h


def pair_stats_from(x: np.ndarray, xp: np.ndarray) -> PairStats:
    n = x.shape[0]
    sxpx = xp.T @ x / n
    sxpxp = xp.T @ xp / n
    return PairStats(sxpx, 0.5 * (sxpxp + sxpxp.T), n)


def accumulate_pair_stats(
    orig_model: SequentialModel,
    partial_model: SequentialModel,
    dataset: Dataset | np.ndarray,
    layer_index: int,
) -> PairStats:
    """``E[X' X^T]`` and ``E[X' X'^T]`` at the input of ``layer_index``, where X
    flows through the original model and X' through the partially compressed one."""
    if len(orig_model.layers) != len(partial_model.layers) or any(
        (a.d_out, a.d_in) != (b.d_out, b.d_in) for a, b in zip(orig_model.layers, partial_model.layers)
    ):
        raise ContractError("models differ in architecture")
    if not 0 <= layer_index < len(orig_model.layers):
        raise ContractError(f"layer index {layer_index} out of range")
    inputs = dataset.flat_inputs if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise ContractError("calibration dataset is empty")
    x = layer_inputs(orig_model, inputs, layer_index)
    xp = layer_inputs(partial_model, inputs, layer_index)
    return pair_stats_from(x, xp)


def balance_pairs(pairs: dict[str, PairStats], scales: dict[str, float]) -> PairStats:
    """Combine per-tag pair statistics with given per-tag scales (as in balancing)."""
    tags = list(pairs)
    sxpx = sum(scales[t] * pairs[t].sigma_xpx for t in tags) / len(tags)
    sxpxp = sum(scales[t] * pairs[t].sigma_xpxp for t in tags) / len(tags)
    return PairStats(sxpx, sxpxp, sum(pairs[t].n_samples for t in tags))


def pool_pairs(pairs: dict[str, PairStats]) -> PairStats:
    tags = list(pairs)
    total = sum(pairs[t].n_samples for t in tags)
    sxpx = sum(pairs[t].n_samples * pairs[t].sigma_xpx for t in tags) / total
    sxpxp = sum(pairs[t].n_samples * pairs[t].sigma_xpxp for t in tags) / total
    return PairStats(sxpx, sxpxp, total)
