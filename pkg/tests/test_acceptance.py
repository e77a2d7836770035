"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL  <detail>`` line to the
terminal (also when run directly: ``python tests/test_acceptance.py``).
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import central_diff, desk_task, teacher_dataset  # noqa: E402
from oracles import exhaustive_best, loss_from_z, naive_greedy, sym_sqrt  # noqa: E402

from physvd import allocation, compressor  # noqa: E402
from physvd.allocation import ScoreTable, allocate, full_rank_plan, greedy_allocate, uniform_plan  # noqa: E402
from physvd.calibration import LayerStats, accumulate_clean_stats, balance_stats, pair_stats_from, pool_stats  # noqa: E402
from physvd.compressor import (  # noqa: E402
    CompressionConfig,
    LayerSolveInputs,
    blend,
    compress_layer,
    compress_model,
    empirical_objective,
    identity_factor,
    plain_svd_model,
    target_matrix,
    trace_objective,
)
from physvd.fields import GridField, fd_derivative, gen_divfree, gen_grf  # noqa: E402
from physvd.linalg import factor_spd  # noqa: E402
from physvd.losses import LossConfig, combined_loss, div_free_error, sobolev_loss, vorticity_error  # noqa: E402
from physvd.netcore import backward, forward, make_mlp  # noqa: E402

_RESULTS = {}


def report(n, ok, detail, capsys=None):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    _RESULTS[n] = ok
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


@pytest.fixture(scope="module")
def task0():
    return desk_task(0)


# 1 ---------------------------------------------------------------------------
def criterion_1(capsys=None):
    model, cal, test, cfg = desk_task(0)
    stats = pool_stats(accumulate_clean_stats(model, cal, cfg))
    x = test.flat_inputs
    worst = 0.0
    for alpha in (0.0, 0.3, 0.7, 1.0):
        comp, _ = compress_model(model, stats, cal, full_rank_plan(model), CompressionConfig(alpha, loss_cfg=cfg))
        worst = max(worst, float(np.max(np.abs(comp(x) - model(x)))))
    report(1, worst <= 1e-8 and len(x) == 256, f"full-rank max output deviation {worst:.2e} over {len(x)} test inputs, "
           "alpha in {0, 0.3, 0.7, 1} (tol 1e-8)", capsys)


def test_criterion_1_full_rank_identity(capsys):
    criterion_1(capsys)


# 2 ---------------------------------------------------------------------------
def criterion_2(capsys=None):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        m, n = rng.integers(2, 40, size=2)
        w = rng.standard_normal((m, n))
        k = int(rng.integers(1, min(m, n) + 1))
        out = compress_layer(LayerSolveInputs(w, identity_factor(m), np.eye(n), factor_spd(np.eye(n)), k))
        u, s, vt = np.linalg.svd(w)
        worst = max(worst, float(np.max(np.abs(out.dense_weight - (u[:, :k] * s[:k]) @ vt[:k]))))
    report(2, worst <= 1e-8, f"identity statistics vs plain truncated SVD, max entry diff {worst:.2e} (tol 1e-8)",
           capsys)


def test_criterion_2_plain_svd_reduction(capsys):
    criterion_2(capsys)


# 3 ---------------------------------------------------------------------------
def criterion_3(capsys=None):
    model, cal, _, cfg = desk_task(0)
    stats = pool_stats(accumulate_clean_stats(model, cal, cfg))
    worst = 0.0
    for k in (4, 16, 40):
        plan = allocation.RankPlan((k, 64, 64), 1.0, 0, 0)
        comp, _ = compress_model(model, stats, cal, plan, CompressionConfig(0.7, loss_cfg=cfg))
        l_mat = factor_spd(stats[0].fisher_z).factor.T
        # independent whitening: symmetric square root instead of the Cholesky-type factor
        with np.errstate(invalid="ignore", divide="ignore"):
            half, _ = sym_sqrt(stats[0].sigma_xx)
        s = np.linalg.svd(l_mat @ model.layers[0].dense_weight @ half, compute_uv=False)
        tail = float(np.sum(s[k:] ** 2))
        intra, _, _ = empirical_objective((model, comp), 0, l_mat, 0.0, cal)
        worst = max(worst, abs(intra - tail) / tail)
    report(3, worst <= 1e-6, f"first-layer empirical error vs dropped sigma^2, max rel diff {worst:.2e} (tol 1e-6)",
           capsys)


def test_criterion_3_loss_degradation_identity(capsys):
    criterion_3(capsys)


# 4 ---------------------------------------------------------------------------
def criterion_4(capsys=None):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(400 + seed)
        m, n, N = 6, 8, 64
        w = rng.standard_normal((m, n))
        x = rng.standard_normal((N, n))
        xp = x + 0.4 * rng.standard_normal((N, n))
        g = rng.standard_normal((m, m + 2))
        fisher = factor_spd(g @ g.T)
        l_mat = fisher.factor.T
        alpha = float(rng.uniform())
        sxx = x.T @ x / N
        pair = pair_stats_from(x, xp)
        s_cov, s_ccov = blend(sxx, pair, alpha)
        r = factor_spd(s_ccov)
        for wn in (compress_layer(LayerSolveInputs(w, fisher, s_cov, r, 3)).dense_weight,
                   rng.standard_normal((m, n))):
            z = x @ w.T
            intra = np.mean(np.sum(((z - x @ wn.T) @ l_mat.T) ** 2, axis=1))
            prop = np.mean(np.sum(((z - xp @ wn.T) @ l_mat.T) ** 2, axis=1))
            sample = (1 - alpha) * intra + alpha * prop
            trace = trace_objective(w, wn, l_mat, sxx, pair, alpha)[2]
            m_star = target_matrix(LayerSolveInputs(w, fisher, s_cov, r, 3))
            const = np.trace(l_mat @ w @ sxx @ w.T @ l_mat.T)
            resid = np.linalg.norm(l_mat @ wn @ r.factor - m_star) ** 2 - np.linalg.norm(m_star) ** 2 + const
            worst = max(worst, abs(trace - sample) / abs(sample), abs(resid - sample) / abs(sample))
    report(4, worst <= 1e-8, f"sample = trace = regression forms, max rel diff {worst:.2e} (tol 1e-8)", capsys)


def test_criterion_4_trace_frobenius_equivalence(capsys):
    criterion_4(capsys)


# 5 ---------------------------------------------------------------------------
def criterion_5(capsys=None):
    losses = 0
    for inst in range(20):
        rng = np.random.default_rng(500 + inst)
        m, n, k, N = int(rng.integers(3, 8)), int(rng.integers(3, 8)), 0, 50
        k = int(rng.integers(1, min(m, n)))
        w = rng.standard_normal((m, n))
        x = rng.standard_normal((N, n))
        xp = x + 0.3 * rng.standard_normal((N, n))
        g = rng.standard_normal((m, m + 1))
        fisher = factor_spd(g @ g.T)
        sxx = x.T @ x / N
        pair = pair_stats_from(x, xp)
        s_cov, s_ccov = blend(sxx, pair, 0.7)
        wn = compress_layer(LayerSolveInputs(w, fisher, s_cov, factor_spd(s_ccov), k)).dense_weight
        best = trace_objective(w, wn, fisher.factor.T, sxx, pair, 0.7)[2]
        for _ in range(1000):
            cand = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
            if trace_objective(w, cand, fisher.factor.T, sxx, pair, 0.7)[2] < best - 1e-12 * abs(best):
                losses += 1
    report(5, losses == 0, f"solver beaten by {losses} of 20x1000 random rank-k alternatives", capsys)


def test_criterion_5_eckart_young_dominance(capsys):
    criterion_5(capsys)


# 6 ---------------------------------------------------------------------------
def criterion_6(capsys=None):
    rng = np.random.default_rng(600)
    over = mismatch = not_optimal = stalled = equal_cost = 0
    for _ in range(1000):
        n_layers = int(rng.integers(1, 5))
        same = rng.random() < 0.5
        c0 = int(rng.integers(2, 9))
        sig = [np.sort(rng.exponential(size=int(rng.integers(1, 4))))[::-1] for _ in range(n_layers)]
        costs = [c0 if same else int(rng.integers(2, 9)) for _ in range(n_layers)]
        b = int(rng.integers(0, sum(len(s) * c for s, c in zip(sig, costs)) + 2))
        plan = greedy_allocate(ScoreTable(tuple(sig), tuple(costs)), b)
        over += plan.spent > b
        left = [c for s, k, c in zip(sig, plan.ranks, costs) if k < len(s)]
        stalled += bool(left) and plan.spent + min(left) <= b
        mismatch += list(plan.ranks) != naive_greedy(sig, costs, b)[0]
        if same:
            equal_cost += 1
            got = sum(float(np.sum(s[:k])) for s, k in zip(sig, plan.ranks))
            not_optimal += abs(got - exhaustive_best(sig, costs, b)) > 1e-12 * max(1.0, got)
    ok = over == stalled == mismatch == not_optimal == 0
    report(6, ok, f"1000 instances: over-budget {over}, stalled {stalled}, naive mismatch {mismatch}, "
           f"non-optimal {not_optimal}/{equal_cost} equal-cost", capsys)


def test_criterion_6_greedy_allocator(capsys):
    criterion_6(capsys)


# 7 ---------------------------------------------------------------------------
def criterion_7(capsys=None):
    worst = 0.0
    grid = (2, 4, 4, 0.25)
    case = 0
    for kind in ("mse", "relative_l1"):
        for p in (0, 1, 2):
            for q in ("l1", "l2"):
                model = make_mlp((32, 20, 16, 32), seed=700 + case)
                rng = np.random.default_rng(case)
                x = rng.standard_normal(32)
                y = model(x) + 0.5 * rng.standard_normal(32)
                cfg = LossConfig(kind, p, q, sobolev_scale=0.5, grid=grid)
                tr = forward(model, x)
                g = backward(model, tr, y, cfg)
                for i, z in enumerate(tr.linear_outputs):
                    fd = central_diff(lambda v: loss_from_z(model, i, v, y, cfg), z)
                    worst = max(worst, float(np.max(np.abs(g.z_grads[i] - fd)) / np.max(np.abs(fd))))
                case += 1
    report(7, worst <= 1e-5, f"backward vs central differences, 12 loss configs x 3 layers, max rel err {worst:.2e} "
           "(tol 1e-5)", capsys)


def test_criterion_7_gradient_correctness(capsys):
    criterion_7(capsys)


# 8 ---------------------------------------------------------------------------
def criterion_8(capsys=None):
    div = max(div_free_error(gen_divfree(s, (16, 16))) for s in range(20))
    vort = max(vorticity_error(f, f) for f in (gen_grf(s, (2, 16, 16)) for s in range(5)))
    row = np.array([0.0, 1.0, 0.0, -1.0])
    dx = fd_derivative(GridField(np.tile(row, (4, 1))[None], 1.0), "x").data[0, 0]
    hand = [
        np.array_equal(dx, [1.0, 0.0, -1.0, 0.0]),
        div_free_error(GridField(np.stack([np.tile(row, (4, 1)), np.zeros((4, 4))]), 1.0)) == 0.5,
        abs(sobolev_loss(GridField(row[None, None], 1.0), GridField(np.zeros((1, 1, 4)), 1.0),
                         LossConfig(sobolev_order=1, sobolev_norm="l2")) - 1.0) <= 1e-15,
        abs(sobolev_loss(GridField(row[None, None], 1.0), GridField(np.zeros((1, 1, 4)), 1.0),
                         LossConfig(sobolev_order=1, sobolev_norm="l1")) - 1.0) <= 1e-15,
    ]
    ok = div <= 1e-12 and vort == 0 and all(hand)
    report(8, ok, f"max div_free_error {div:.1e}, vorticity_error(x, x) = {vort}, hand examples {sum(hand)}/4 exact",
           capsys)


def test_criterion_8_physics_metrics(capsys):
    criterion_8(capsys)


# 9 ---------------------------------------------------------------------------
def criterion_9(capsys=None):
    model = make_mlp((128, 64, 64, 128), seed=9)
    cal = teacher_dataset(model, 909, 256, tag_names=("lo", "hi"))
    cal.inputs[cal.tag_index == 1] *= 5.0
    cal.targets[:] = (model(cal.flat_inputs) + 0.05 * np.random.default_rng(9).standard_normal(
        cal.flat_targets.shape)).reshape(cal.targets.shape)
    cfg = LossConfig.for_family("incompressible_ns", sobolev_scale=1.0, grid=(2, 8, 8, 1 / 8))
    groups = accumulate_clean_stats(model, cal, cfg)
    base = balance_stats(groups)
    plan = allocate(model, base.layers, 0.5)
    parts = []
    ok = True
    for tag in groups:
        scaled = dict(groups)
        scaled[tag] = [LayerStats(1e3 * s.sigma_xx, 1e3 * s.fisher_z, s.n_samples, s.dataset_tag) for s in groups[tag]]
        out = balance_stats(scaled)
        rel = max(
            np.linalg.norm(getattr(a, k) - getattr(b, k)) / np.linalg.norm(getattr(a, k))
            for a, b in zip(base.layers, out.layers)
            for k in ("sigma_xx", "fisher_z")
        )
        same_plan = allocate(model, out.layers, 0.5).ranks == plan.ranks
        ok = ok and rel <= 1e-12 and same_plan
        parts.append(f"x1e3 on '{tag}': rel change {rel:.2e}, plan {'same' if same_plan else 'changed'}")
    report(9, ok, "; ".join(parts) + " (tol 1e-12)", capsys)


def test_criterion_9_balancing_scale_invariance(capsys):
    criterion_9(capsys)


# 10 --------------------------------------------------------------------------
def criterion_10(capsys=None):
    model, _, test, cfg = desk_task(10, n_cal=48)
    cal = teacher_dataset(model, 1010, 48)
    records = []
    real = factor_spd

    def recording(s, *a, **kw):
        res = real(s, *a, **kw)
        records.append((np.asarray(s), res))
        return res

    compressor.factor_spd = allocation.factor_spd = recording
    try:
        stats = pool_stats(accumulate_clean_stats(model, cal, cfg))
        plan = allocate(model, stats, 0.5)
        comp, report_ = compress_model(model, stats, cal, plan, CompressionConfig(loss_cfg=cfg))
    finally:
        compressor.factor_spd = allocation.factor_spd = real
    worst = max(
        np.linalg.norm(r.factor @ r.factor.T - s) / max(np.linalg.norm(s), 1e-300) for s, r in records
    )
    fallbacks = sum(r.mode == "evd_fallback" for _, r in records)
    finite = bool(np.all(np.isfinite(comp(test.flat_inputs))))
    ok = finite and worst <= 1e-6 and fallbacks >= 1
    report(10, ok, f"N = {len(cal)} < d = {model.input_dim}: completed, {len(records)} factorizations, "
           f"{fallbacks} evd_fallback, max reconstruction {worst:.2e} (tol 1e-6)", capsys)


def test_criterion_10_stability_fallback(capsys):
    criterion_10(capsys)


# 11 --------------------------------------------------------------------------
def criterion_11(capsys=None):
    eta = 0.5
    wins_base = wins_svd = 0
    for seed in range(10):
        model, cal, test, cfg = desk_task(seed, hidden=(128, 128), n_cal=512)
        stats = pool_stats(accumulate_clean_stats(model, cal, cfg))

        def degradation(m):
            l0 = np.mean(combined_loss(model(test.flat_inputs), test.flat_targets, cfg))
            return (np.mean(combined_loss(m(test.flat_inputs), test.flat_targets, cfg)) - l0) / l0

        full, _ = compress_model(model, stats, cal, allocate(model, stats, eta),
                                 CompressionConfig(0.7, "fisher", ratio=eta, loss_cfg=cfg))
        base, _ = compress_model(model, stats, cal, uniform_plan(model, eta),
                                 CompressionConfig(0.5, "identity", ratio=eta, loss_cfg=cfg))
        svd = plain_svd_model(model, uniform_plan(model, eta))
        d_full, d_base, d_svd = degradation(full), degradation(base), degradation(svd)
        wins_base += d_full <= d_base
        wins_svd += d_full <= d_svd
    ok = wins_base >= 8 and wins_svd >= 8
    report(11, ok, f"full method <= base model on {wins_base}/10 seeds, <= plain SVD on {wins_svd}/10 (need 8/10)",
           capsys)


def test_criterion_11_ablation_ordering(capsys):
    criterion_11(capsys)


if __name__ == "__main__":
    failed = []
    for n in range(1, 12):
        try:
            globals()[f"criterion_{n}"]()
        except AssertionError:
            failed.append(n)
    sys.exit(1 if failed else 0)
