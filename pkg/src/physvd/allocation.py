"""Global rank allocation under a parameter budget.

Every singular component of ``L W R^c`` is a candidate worth ``sigma^2``
costing ``d_out + d_in`` parameters; candidates are taken greedily by
``sigma^2 / cost`` while they still fit the budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import LayerStats
from .errors import ContractError
from .linalg import DEFAULT_JITTER_SCHEDULE, as_matrix, factor_spd, svd
from .netcore import SequentialModel


@dataclass(frozen=True)
class RankPlan:
    ranks: tuple[int, ...]
    ratio: float
    budget: int
    spent: int
    skipped_components: int = 0


@dataclass(frozen=True)
class ScoreTable:
    sigma2: tuple[np.ndarray, ...]
    unit_cost: tuple[int, ...]

    @property
    def efficiency(self) -> tuple[np.ndarray, ...]:
        return tuple(s / p for s, p in zip(self.sigma2, self.unit_cost))


def layer_scores(fisher_factor, weight, clean_factor) -> np.ndarray:
    """Squared singular values of ``L @ W @ R^c``, descending."""
    lm = as_matrix(fisher_factor, "fisher factor L")
    w = as_matrix(weight, "weight")
    rc = as_matrix(clean_factor, "clean factor R^c")
    if lm.shape != (w.shape[0], w.shape[0]) or rc.shape != (w.shape[1], w.shape[1]):
        raise ContractError(f"dimension mismatch: L {lm.shape}, W {w.shape}, R^c {rc.shape}")
    s = svd(lm @ w @ rc, "scoring matrix").singular_values
    return s * s


def score_table(
    model: SequentialModel,
    stats: Sequence[LayerStats],
    fisher_mode: str = "fisher",
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
) -> ScoreTable:
    """Scores for every layer from clean statistics of the uncompressed model."""
    if len(stats) != len(model.layers):
        raise ContractError(f"{len(stats)} layer stats for {len(model.layers)} layers")
    sig, cost = [], []
    for i, (layer, st) in enumerate(zip(model.layers, stats)):
        w = layer.dense_weight
        if fisher_mode == "fisher":
            lm = factor_spd(st.fisher_z, jitter_schedule, f"layer {i} fisher").factor.T
        elif fisher_mode == "identity":
            lm = np.eye(w.shape[0])
        else:
            raise ContractError(f"unknown fisher_mode {fisher_mode!r}")
        rc = factor_spd(st.sigma_xx, jitter_schedule, f"layer {i} sigma_xx").factor
        sig.append(layer_scores(lm, w, rc))
        cost.append(w.shape[0] + w.shape[1])
    return ScoreTable(tuple(sig), tuple(cost))


def budget(ratio: float, model_or_shapes) -> int:
    """``floor(ratio * total dense linear parameters)``; biases excluded."""
    if not 0 < ratio <= 1:
        raise ContractError(f"ratio must be in (0, 1], got {ratio}")
    if isinstance(model_or_shapes, SequentialModel):
        total = sum(l.d_out * l.d_in for l in model_or_shapes.layers)
    else:
        total = sum(int(a) * int(b) for a, b in model_or_shapes)
    # guard against 0.7 * 10 = 6.999... style float artefacts
    return int(math.floor(round(ratio * total, 9)))


def greedy_allocate(scores: ScoreTable, budget_: int, ratio: float = float("nan")) -> RankPlan:
    if budget_ < 0:
        raise ContractError("budget must be >= 0")
    cands = [
        (-float(v), l, i)
        for l, eff in enumerate(scores.efficiency)
        for i, v in enumerate(eff)
    ]
    cands.sort()
    ranks = [0] * len(scores.sigma2)
    spent = skipped = 0
    for _, l, _ in cands:
        cost = scores.unit_cost[l]
        if spent + cost <= budget_:
            ranks[l] += 1
            spent += cost
        else:
            skipped += 1
    return RankPlan(tuple(ranks), ratio, int(budget_), spent, skipped)


def allocate(
    model: SequentialModel,
    stats: Sequence[LayerStats],
    ratio: float,
    fisher_mode: str = "fisher",
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
) -> RankPlan:
    scores = score_table(model, stats, fisher_mode, jitter_schedule)
    return greedy_allocate(scores, budget(ratio, model), ratio)


def uniform_plan(model: SequentialModel, ratio: float) -> RankPlan:
    """Same fraction of every layer: ``k_l = floor(ratio * m n / (m + n))``."""
    b = budget(ratio, model)
    ranks = []
    for layer in model.layers:
        m, n = layer.d_out, layer.d_in
        ranks.append(min(min(m, n), int(math.floor(round(ratio * m * n / (m + n), 9)))))
    spent = sum(k * (l.d_out + l.d_in) for k, l in zip(ranks, model.layers))
    return RankPlan(tuple(ranks), ratio, b, spent, 0)


def full_rank_plan(model: SequentialModel) -> RankPlan:
    ranks = tuple(min(l.d_out, l.d_in) for l in model.layers)
    spent = sum(k * (l.d_out + l.d_in) for k, l in zip(ranks, model.layers))
    return RankPlan(ranks, 1.0, budget(1.0, model), spent, 0)


def plan_summary(plan: RankPlan, model: SequentialModel, scores: ScoreTable) -> dict:
    if len(plan.ranks) != len(model.layers) or len(scores.sigma2) != len(model.layers):
        raise ContractError("plan, scores and model disagree on layer count")
    rows = []
    for i, (k, layer, s2) in enumerate(zip(plan.ranks, model.layers, scores.sigma2)):
        rows.append(
            {
                "layer": i,
                "k": int(k),
                "dense_params": layer.d_out * layer.d_in,
                "factored_params": int(k) * (layer.d_out + layer.d_in),
                "retained_sigma2": float(np.sum(s2[:k])),
                "dropped_sigma2": float(np.sum(s2[k:])),
            }
        )
    totals = {
        key: sum(r[key] for r in rows)
        for key in ("dense_params", "factored_params", "retained_sigma2", "dropped_sigma2")
    }
    totals.update(budget=plan.budget, spent=plan.spent, ratio=plan.ratio, skipped_components=plan.skipped_components)
    return {"layers": rows, "totals": totals}
