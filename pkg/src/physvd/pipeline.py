"""Workflow steps shared by the command line and the desk-scale experiments."""
from __future__ import annotations

import logging

import numpy as np

from .allocation import RankPlan, allocate, full_rank_plan, uniform_plan
from .calibration import LayerStats, accumulate_clean_stats, balance_stats, pool_stats
from .compressor import CompressionConfig, compress_model
from .config import RunConfig
from .errors import ConfigError
from .fields import Dataset, GridField, apply_operator, default_heat_step, gen_inputs
from .losses import LossConfig, calibrate_sobolev_scale, combined_loss, field_metrics, relative_change_report
from .netcore import LinearLayer, SequentialModel, backward, forward, make_mlp, weight_grads

log = logging.getLogger(__name__)

SPLITS = {"calib": 0, "test": 1}
_MODEL_STREAM = 2


def generate_dataset(cfg: RunConfig, split: str = "calib", model: SequentialModel | None = None) -> Dataset:
    """Seeded inputs split evenly across tags (each tag scaled by its
    ``tag_scales`` entry); targets from the heat-step teacher or, when a
    model is given, the model's own output plus seeded noise."""
    if split not in SPLITS:
        raise ConfigError(f"split: expected calib or test, got {split!r}")
    n = cfg.n_calib if split == "calib" else cfg.n_test
    source = cfg.target_source
    if source == "auto":
        source = "model" if model is not None else "heat"
    if source == "model" and model is None:
        raise ConfigError("target_source: 'model' targets need a model file (--model)")
    if model is not None and model.input_dim != cfg.dim:
        raise ConfigError(f"channels: model input dim {model.input_dim} != grid size {cfg.dim}")

    ss = np.random.SeedSequence([cfg.seed, SPLITS[split]])
    tag_seeds = ss.spawn(len(cfg.tags) + 1)
    counts = [n // len(cfg.tags) + (i < n % len(cfg.tags)) for i in range(len(cfg.tags))]
    grid = (cfg.channels, cfg.height, cfg.width)
    xs, idx = [], []
    for t, (cnt, scale, s) in enumerate(zip(counts, cfg.scales, tag_seeds)):
        xs.append(scale * gen_inputs(s, cnt, grid, cfg.num_modes, cfg.decay, cfg.divfree_inputs))
        idx.append(np.full(cnt, t, dtype=np.int64))
    x = np.concatenate(xs) if xs else np.zeros((0, *grid))
    if source == "heat":
        op = default_heat_step(cfg.spacing)
        y = np.stack([apply_operator(GridField(f, cfg.spacing), op).data for f in x]) if n else x.copy()
    else:
        out = model(x.reshape(n, -1))
        noise = np.random.default_rng(tag_seeds[-1]).standard_normal(out.shape)
        y = (out + cfg.label_noise * np.std(out) * noise).reshape(x.shape)
    return Dataset(x, y, np.concatenate(idx), cfg.tags, cfg.spacing, cfg.family)


def create_model(cfg: RunConfig, train_data: Dataset | None = None) -> SequentialModel:
    seed = np.random.SeedSequence([cfg.seed, _MODEL_STREAM])
    model = make_mlp(cfg.widths, cfg.activation, seed)
    if cfg.model_init == "trained":
        if train_data is None:
            raise ConfigError("model_init: 'trained' needs a dataset (--data)")
        model = train(model, train_data, cfg.loss_config(0.0), cfg.train_steps, cfg.learning_rate)
    return model


def train(model: SequentialModel, data: Dataset, loss_cfg: LossConfig, steps: int, lr: float) -> SequentialModel:
    """Plain full-batch gradient descent on the mean loss."""
    x, y = data.flat_inputs, data.flat_targets
    layers = list(model.layers)
    for step in range(steps):
        m = SequentialModel(tuple(layers))
        tr = forward(m, x)
        grads = weight_grads(m, tr, backward(m, tr, y, loss_cfg))
        layers = [
            LinearLayer(l.dense_weight - lr * dw, l.bias - lr * db, l.activation)
            for l, (dw, db) in zip(layers, grads)
        ]
        if step % 50 == 0:
            log.debug("train step %d loss %.4g", step, float(np.mean(combined_loss(tr.final_output, y, loss_cfg))))
    return SequentialModel(tuple(layers))


def resolve_sobolev_scale(cfg: RunConfig, model: SequentialModel, data: Dataset) -> float:
    if cfg.sobolev_scale != "auto":
        return float(cfg.sobolev_scale)
    lc = cfg.loss_config(0.0)
    return calibrate_sobolev_scale(model(data.flat_inputs), data.flat_targets, lc, pilot=cfg.sobolev_pilot)


def calibrate(cfg: RunConfig, model: SequentialModel, data: Dataset, deterministic: bool = True):
    scale = resolve_sobolev_scale(cfg, model, data)
    groups = accumulate_clean_stats(model, data, cfg.loss_config(scale), deterministic, cfg.workers)
    return groups, scale


def reduce_stats(groups: dict[str, list[LayerStats]], balance: bool):
    return balance_stats(groups) if balance else pool_stats(groups)


def make_plan(cfg: RunConfig, model: SequentialModel, groups, exact: bool = False) -> RankPlan:
    if exact:
        return full_rank_plan(model)
    if cfg.rank_mode == "uniform":
        return uniform_plan(model, cfg.ratio)
    stats = reduce_stats(groups, cfg.balance)
    layers = stats.layers if cfg.balance else stats
    return allocate(model, layers, cfg.ratio, cfg.fisher_mode)


def compress(cfg: RunConfig, model, groups, data, plan, scale: float):
    ccfg = CompressionConfig(cfg.alpha, cfg.fisher_mode, cfg.balance, cfg.ratio, cfg.loss_config(scale))
    return compress_model(model, reduce_stats(groups, cfg.balance), data, plan, ccfg)


METRIC_KEYS = ("base_loss", "sobolev_loss", "div_free_error", "vorticity_error")


def evaluate(cfg: RunConfig, orig: SequentialModel, comp: SequentialModel, test: Dataset) -> dict:
    lc = cfg.loss_config(0.0)
    x, y = test.flat_inputs, test.flat_targets
    m0 = field_metrics(orig(x), y, lc)
    m1 = field_metrics(comp(x), y, lc)
    rel = relative_change_report(m0, m1)
    out = {}
    for k in METRIC_KEYS:
        out[f"{k}_orig"] = m0[k]
        out[f"{k}_compressed"] = m1[k]
        out[f"{k}_rel_change_pct"] = rel[k]
    return out
