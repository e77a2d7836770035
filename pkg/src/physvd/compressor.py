"""Loss-aware low-rank layer solver and the sequential compression pipeline.

For one layer with Fisher factor ``L`` (``L^T L = F_Z``) and blended input
statistics

    S_cov  = (1 - a) E[X X^T] + a E[X' X^T]
    S_ccov = (1 - a) E[X X^T] + a E[X' X'^T] = R R^T

the compressed weight minimising
``(1-a) E||L(W X - W' X)||^2 + a E||L(W X - W' X')||^2`` at rank ``k`` is
``W' = L^-1 SVD_k(L W S_cov^T R^-T) R^-1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocation import RankPlan
from .calibration import (
    BalancedStats,
    LayerStats,
    PairStats,
    balance_pairs,
    layer_inputs,
    pair_stats_from,
    pool_pairs,
)
from .errors import ConfigError, ContractError, NumericalError
from .fields import Dataset
from .linalg import (
    DEFAULT_JITTER_SCHEDULE,
    FactorResult,
    factor_spd,
    solve_factor,
    truncated_svd,
)
from .losses import LossConfig
from .netcore import FactoredLayer, SequentialModel, activate, replace_layer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompressionConfig:
    alpha: float = 0.7
    fisher_mode: str = "fisher"
    balance: bool = False
    ratio: float = 0.5
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    jitter_schedule: tuple[float, ...] = DEFAULT_JITTER_SCHEDULE

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.fisher_mode not in ("fisher", "identity"):
            raise ConfigError(f"fisher_mode must be 'fisher' or 'identity', got {self.fisher_mode!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"ratio must be in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class LayerSolveInputs:
    weight: np.ndarray
    fisher: FactorResult  # factor C with C C^T = F_Z, so L = C^T
    sigma_cov: np.ndarray
    r_factor: FactorResult  # R with R R^T = S_ccov
    k: int
    bias: np.ndarray | None = None
    activation: str = "tanh"
    role: str = "layer"


def identity_factor(n: int) -> FactorResult:
    return FactorResult(np.eye(n), "cholesky", 0.0)


def blend(sigma_xx: np.ndarray, pair: PairStats, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """``(S_cov, S_ccov)``; ``S_cov`` is left asymmetric on purpose."""
    s_cov = (1.0 - alpha) * sigma_xx + alpha * pair.sigma_xpx
    s_ccov = (1.0 - alpha) * sigma_xx + alpha * pair.sigma_xpxp
    return s_cov, 0.5 * (s_ccov + s_ccov.T)


def target_matrix(inp: LayerSolveInputs) -> np.ndarray:
    """``M* = L W S_cov^T R^-T``."""
    w = np.asarray(inp.weight, dtype=np.float64)
    t = solve_factor(inp.r_factor, w @ inp.sigma_cov.T, "right_inverse_transpose", inp.role)
    return inp.fisher.factor.T @ t


def compress_layer(inp: LayerSolveInputs) -> FactoredLayer:
    w = np.asarray(inp.weight, dtype=np.float64)
    m, n = w.shape
    if inp.fisher.order != m or inp.r_factor.order != n or inp.sigma_cov.shape != (n, n):
        raise ContractError(
            f"{inp.role}: factor orders ({inp.fisher.order}, {inp.r_factor.order}) do not match weight {w.shape}"
        )
    if not 0 <= inp.k <= min(m, n):
        raise ContractError(f"{inp.role}: rank {inp.k} out of range [0, {min(m, n)}]")
    if inp.k == 0:
        return FactoredLayer(np.zeros((m, 0)), np.zeros((0, n)), inp.bias, inp.activation)
    a, b = truncated_svd(target_matrix(inp), inp.k, f"{inp.role} target")
    left = solve_factor(inp.fisher, a, "left_inverse_transpose", inp.role)
    right = solve_factor(inp.r_factor, b, "right_inverse", inp.role)
    if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
        raise NumericalError(f"{inp.role}: non-finite factors after back-mapping")
    return FactoredLayer(left, right, inp.bias, inp.activation)


# ---------------------------------------------------------------- objectives


def trace_objective(
    w: np.ndarray,
    w_new: np.ndarray,
    l_mat: np.ndarray,
    sigma_xx: np.ndarray,
    pair: PairStats,
    alpha: float,
) -> tuple[float, float, float]:
    """Blended objective from second moments: ``(intra, propagated, total)``."""
    lw, lwn = l_mat @ w, l_mat @ w_new
    const = float(np.trace(lw @ sigma_xx @ lw.T))
    d = l_mat @ (w - w_new)
    intra = float(np.trace(d @ sigma_xx @ d.T))
    prop = const - 2.0 * float(np.trace(lwn @ pair.sigma_xpx @ lw.T)) + float(
        np.trace(lwn @ pair.sigma_xpxp @ lwn.T)
    )
    return intra, prop, (1.0 - alpha) * intra + alpha * prop


def empirical_objective(
    model_pair: tuple[SequentialModel, SequentialModel],
    layer_index: int,
    l_mat: np.ndarray,
    alpha: float,
    dataset: Dataset | np.ndarray,
) -> tuple[float, float, float]:
    """Sample averages of ``||L(W X - W' X)||^2`` and ``||L(W X - W' X')||^2``.

    X enters ``layer_index`` of the original model, X' of the compressed one.
    """
    orig, comp = model_pair
    inputs = dataset.flat_inputs if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    x = layer_inputs(orig, inputs, layer_index)
    xp = layer_inputs(comp, inputs, layer_index)
    w = orig.layers[layer_index].dense_weight
    wn = comp.layers[layer_index].dense_weight
    z = x @ w.T
    intra = float(np.mean(np.sum(((z - x @ wn.T) @ l_mat.T) ** 2, axis=1)))
    prop = float(np.mean(np.sum(((z - xp @ wn.T) @ l_mat.T) ** 2, axis=1)))
    return intra, prop, (1.0 - alpha) * intra + alpha * prop


# ------------------------------------------------------------------ pipeline


def _fisher_factor(st: LayerStats, cfg: CompressionConfig, role: str) -> FactorResult:
    if cfg.fisher_mode == "identity":
        return identity_factor(st.fisher_z.shape[0])
    return factor_spd(st.fisher_z, cfg.jitter_schedule, f"{role} fisher_z")


def compress_model(
    model: SequentialModel,
    stats: Sequence[LayerStats] | BalancedStats,
    dataset: Dataset,
    plan: RankPlan,
    cfg: CompressionConfig,
) -> tuple[SequentialModel, dict]:
    """Compress layers first to last, each against the activations produced
    by the already-compressed prefix.

    With ``BalancedStats`` the per-tag pair statistics are combined with the
    same per-tag input scales used for the clean covariance.
    """
    balanced = isinstance(stats, BalancedStats)
    layer_stats = stats.layers if balanced else list(stats)
    n_layers = len(model.layers)
    if len(layer_stats) != n_layers or len(plan.ranks) != n_layers:
        raise ContractError(
            f"stats ({len(layer_stats)}) / plan ({len(plan.ranks)}) do not cover {n_layers} layers"
        )
    if len(dataset) == 0:
        raise ContractError("calibration dataset is empty")

    groups = dataset.by_tag() if balanced else {"all": dataset}
    if balanced and set(groups) != set(stats.scale_x):
        raise ContractError(
            f"dataset tags {sorted(groups)} do not match balanced stats tags {sorted(stats.scale_x)}"
        )
    # clean activations are cached; the perturbed ones advance one layer at a time
    clean = {t: g.flat_inputs for t, g in groups.items()}
    pert = {t: g.flat_inputs for t, g in groups.items()}

    current = model
    report: dict = {"alpha": cfg.alpha, "fisher_mode": cfg.fisher_mode, "balance": balanced, "layers": []}
    for i, layer in enumerate(model.layers):
        role = f"layer {i}"
        try:
            st = layer_stats[i]
            pairs = {t: pair_stats_from(clean[t], pert[t]) for t in groups}
            if balanced:
                pair = balance_pairs(pairs, {t: stats.scale_x[t][i] for t in groups})
            else:
                pair = pool_pairs(pairs)
            s_cov, s_ccov = blend(st.sigma_xx, pair, cfg.alpha)
            fisher = _fisher_factor(st, cfg, role)
            r_fac = factor_spd(s_ccov, cfg.jitter_schedule, f"{role} sigma_c_cov")
            w = layer.dense_weight
            new = compress_layer(
                LayerSolveInputs(w, fisher, s_cov, r_fac, int(plan.ranks[i]), layer.bias, layer.activation, role)
            )
            l_mat = fisher.factor.T
            before = trace_objective(w, w, l_mat, st.sigma_xx, pair, cfg.alpha)
            after = trace_objective(w, new.dense_weight, l_mat, st.sigma_xx, pair, cfg.alpha)
        except (NumericalError, ContractError) as exc:
            report["failed_layer"] = i
            raise type(exc)(f"compression aborted at layer {i}: {exc}") from exc
        current = replace_layer(current, i, new)
        for t in groups:
            clean[t] = activate(layer.activation, layer.linear(clean[t]))
            pert[t] = activate(new.activation, new.linear(pert[t]))
        report["layers"].append(
            {
                "layer": i,
                "k": int(plan.ranks[i]),
                "objective_before": dict(zip(("intra", "propagated", "total"), before)),
                "objective_after": dict(zip(("intra", "propagated", "total"), after)),
                "fisher_mode": fisher.mode,
                "fisher_jitter": fisher.jitter_used,
                "r_mode": r_fac.mode,
                "r_jitter": r_fac.jitter_used,
            }
        )
        log.info("layer %d: k=%d objective %.4g -> %.4g (%s)", i, plan.ranks[i], before[2], after[2], r_fac.mode)
    return current, report


def plain_svd_model(model: SequentialModel, plan: RankPlan) -> SequentialModel:
    """Truncate every weight with a plain SVD at the planned ranks."""
    out = model
    for i, (layer, k) in enumerate(zip(model.layers, plan.ranks)):
        w = layer.dense_weight
        if k == 0:
            a, b = np.zeros((w.shape[0], 0)), np.zeros((0, w.shape[1]))
        else:
            a, b = truncated_svd(w, int(k), f"layer {i} weight")
        out = replace_layer(out, i, FactoredLayer(a, b, layer.bias, layer.activation))
    return out
