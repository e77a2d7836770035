import numpy as np
import pytest

from physvd.fields import Dataset, gen_inputs
from physvd.losses import LossConfig, calibrate_sobolev_scale
from physvd.netcore import make_mlp


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def teacher_dataset(model, seed, n, grid=(2, 8, 8), noise=0.05, divfree=True, tag_names=("main",)):
    """Inputs from the generators; targets are the model's own outputs plus noise."""
    c, h, w = grid
    x = gen_inputs(seed, n, grid, divfree=divfree).reshape(n, -1)
    y = model(x)
    y = y + noise * np.std(y) * np.random.default_rng([seed, 7]).standard_normal(y.shape)
    tags = np.arange(n) % len(tag_names)
    return Dataset(x.reshape(n, c, h, w), y.reshape(n, c, h, w), tags, tag_names, 1.0 / w)


def desk_task(seed, grid=(2, 8, 8), hidden=(64, 64), n_cal=256, n_test=256, family="incompressible_ns"):
    c, h, w = grid
    d = c * h * w
    model = make_mlp((d, *hidden, d), seed=seed)
    cal = teacher_dataset(model, 1000 + seed, n_cal, grid)
    test = teacher_dataset(model, 2000 + seed, n_test, grid)
    base = LossConfig.for_family(family, grid=(c, h, w, 1.0 / w))
    cfg = base.with_scale(calibrate_sobolev_scale(model(cal.flat_inputs), cal.flat_targets, base))
    return model, cal, test, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
