"""Base losses, the finite-difference Sobolev loss, their combination and
analytic gradients, plus divergence/vorticity physics metrics.

Loss functions accept a single flattened prediction ``(d,)`` or a batch
``(N, d)``; batched calls return one value (or gradient row) per sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .fields import (
    MULTI_INDICES,
    GridField,
    StencilSet,
    apply_multi_index,
    apply_multi_index_adjoint,
    fd_divergence,
    fd_vorticity,
)

# Sobolev order used per PDE family
FAMILY_ORDER: dict[str, int] = {
    "incompressible_ns": 2,
    "diffusion_reaction": 2,
    "compressible_euler": 1,
    "compressible_ns": 1,
    "wave": 1,
    "shallow_water": 1,
}

_REL_L1_FLOOR = 1e-15


@dataclass(frozen=True)
class LossConfig:
    base_kind: str = "mse"
    sobolev_order: int = 2
    sobolev_norm: str = "l1"
    derivative_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    sobolev_scale: float = 0.0
    grid: tuple[int, int, int, float] | None = None  # (C, H, W, spacing)
    family: str | None = None

    def __post_init__(self):
        if self.base_kind not in ("mse", "relative_l1"):
            raise ConfigError(f"base_kind must be 'mse' or 'relative_l1', got {self.base_kind!r}")
        if self.sobolev_order not in (0, 1, 2):
            raise ConfigError(f"sobolev_order must be 0, 1 or 2, got {self.sobolev_order}")
        if self.sobolev_norm not in ("l1", "l2"):
            raise ConfigError(f"sobolev_norm must be 'l1' or 'l2', got {self.sobolev_norm!r}")
        if len(self.derivative_weights) < self.sobolev_order + 1 or any(
            w <= 0 for w in self.derivative_weights
        ):
            raise ConfigError("derivative_weights needs one positive weight per order 0..p")
        if self.sobolev_scale < 0:
            raise ConfigError("sobolev_scale must be >= 0")
        if self.family is not None:
            if self.family not in FAMILY_ORDER:
                raise ConfigError(f"unknown PDE family {self.family!r}")
            if FAMILY_ORDER[self.family] != self.sobolev_order:
                raise ConfigError(
                    f"family {self.family} requires sobolev_order {FAMILY_ORDER[self.family]}, "
                    f"got {self.sobolev_order}"
                )
        if self.sobolev_scale > 0 and self.grid is None:
            raise ConfigError("sobolev_scale > 0 requires grid metadata")

    @classmethod
    def for_family(cls, family: str, **kw) -> "LossConfig":
        if family not in FAMILY_ORDER:
            raise ConfigError(f"unknown PDE family {family!r}")
        return cls(sobolev_order=FAMILY_ORDER[family], family=family, **kw)

    def with_scale(self, scale: float) -> "LossConfig":
        return LossConfig(
            self.base_kind,
            self.sobolev_order,
            self.sobolev_norm,
            self.derivative_weights,
            float(scale),
            self.grid,
            self.family,
        )


def _batch(a) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return a[None], True
    if a.ndim != 2:
        raise ContractError(f"expected a vector or a batch of vectors, got shape {a.shape}")
    return a, False


def _pair(pred, target):
    p, single = _batch(pred)
    t, _ = _batch(target)
    if p.shape != t.shape:
        raise ContractError(f"prediction {p.shape} and target {t.shape} differ in shape")
    return p, t, single


def _out(v: np.ndarray, single: bool):
    return v[0] if single else v


def base_loss(pred, target, kind: str = "mse"):
    p, t, single = _pair(pred, target)
    r = p - t
    if kind == "mse":
        val = np.mean(r * r, axis=1)
    elif kind == "relative_l1":
        val = np.sum(np.abs(r), axis=1) / np.maximum(np.sum(np.abs(t), axis=1), _REL_L1_FLOOR)
    else:
        raise ConfigError(f"unknown base loss {kind!r}")
    return float(val[0]) if single else val


def base_loss_grad(pred, target, kind: str = "mse"):
    p, t, single = _pair(pred, target)
    r = p - t
    if kind == "mse":
        g = 2.0 * r / r.shape[1]
    elif kind == "relative_l1":
        g = np.sign(r) / np.maximum(np.sum(np.abs(t), axis=1), _REL_L1_FLOOR)[:, None]
    else:
        raise ConfigError(f"unknown base loss {kind!r}")
    return _out(g, single)


def _grid_of(cfg: LossConfig, d: int) -> tuple[int, int, int, float]:
    if cfg.grid is None:
        raise ConfigError("Sobolev terms need grid metadata (C, H, W, spacing)")
    c, h, w, sp = cfg.grid
    if c * h * w != d:
        raise ConfigError(f"vector length {d} does not match grid {c}x{h}x{w}")
    return c, h, w, sp


def _sobolev_terms(r: np.ndarray, cfg: LossConfig):
    """Yield ``(weight, alpha, D^alpha r)`` for every multi-index of order <= p."""
    c, h, w, sp = _grid_of(cfg, r.shape[1])
    f = r.reshape(r.shape[0], c, h, w)
    st = StencilSet(sp)
    for order in range(cfg.sobolev_order + 1):
        for alpha in MULTI_INDICES[order]:
            yield cfg.derivative_weights[order], alpha, apply_multi_index(st, alpha, f), st


def sobolev_loss(pred, target, cfg: LossConfig):
    """Sum over multi-indices of ``weight * mean_over_grid(sum_channels |D^a (pred - target)|^q)``.

    Accepts GridFields or flattened vectors/batches.
    """
    if isinstance(pred, GridField):
        if not isinstance(target, GridField) or pred.data.shape != target.data.shape or pred.spacing != target.spacing:
            raise ContractError("sobolev_loss needs matching grids")
        c, h, w = pred.data.shape
        cfg = LossConfig(
            cfg.base_kind, cfg.sobolev_order, cfg.sobolev_norm, cfg.derivative_weights, cfg.sobolev_scale,
            (c, h, w, pred.spacing), None,
        )
        pred, target = pred.data.ravel(), target.data.ravel()
    p, t, single = _pair(pred, target)
    r = p - t
    _, h, w, _ = _grid_of(cfg, r.shape[1])
    total = np.zeros(r.shape[0])
    for wt, _, e, _ in _sobolev_terms(r, cfg):
        mag = np.abs(e) if cfg.sobolev_norm == "l1" else e * e
        total += wt * mag.reshape(r.shape[0], -1).sum(axis=1) / (h * w)
    return float(total[0]) if single else total


def sobolev_loss_grad(pred, target, cfg: LossConfig):
    p, t, single = _pair(pred, target)
    r = p - t
    _, h, w, _ = _grid_of(cfg, r.shape[1])
    g = np.zeros_like(r).reshape(r.shape[0], *cfg.grid[:3])
    for wt, alpha, e, st in _sobolev_terms(r, cfg):
        # sign(0) = 0 gives the zero subgradient for l1 at exact zeros
        de = np.sign(e) if cfg.sobolev_norm == "l1" else 2.0 * e
        g += wt / (h * w) * apply_multi_index_adjoint(st, alpha, de)
    return _out(g.reshape(r.shape), single)


def combined_loss(pred, target, cfg: LossConfig):
    val = base_loss(pred, target, cfg.base_kind)
    if cfg.sobolev_scale > 0:
        val = val + cfg.sobolev_scale * sobolev_loss(pred, target, cfg)
    return val


def combined_loss_grad(pred, target, cfg: LossConfig):
    g = base_loss_grad(pred, target, cfg.base_kind)
    if cfg.sobolev_scale > 0:
        g = g + cfg.sobolev_scale * sobolev_loss_grad(pred, target, cfg)
    return g


def calibrate_sobolev_scale(pred, target, cfg: LossConfig, pilot: int = 32, factor: float = 10.0) -> float:
    """Scale that puts the Sobolev term ``factor`` times above the base term,
    measured on the first ``pilot`` samples."""
    p, t, _ = _pair(pred, target)
    p, t = p[:pilot], t[:pilot]
    base = float(np.mean(base_loss(p, t, cfg.base_kind)))
    sob = float(np.mean(sobolev_loss(p, t, cfg)))
    if sob <= 0.0 or base <= 0.0:
        return 1.0
    return factor * base / sob


# ------------------------------------------------------------------ physics


def div_free_error(vel: GridField) -> float:
    return float(np.mean(np.abs(fd_divergence(vel).data)))


def vorticity_error(pred_vel: GridField, ref_vel: GridField) -> float:
    if pred_vel.data.shape != ref_vel.data.shape or pred_vel.spacing != ref_vel.spacing:
        raise ContractError("vorticity_error needs matching grids")
    return float(np.mean(np.abs(fd_vorticity(pred_vel).data - fd_vorticity(ref_vel).data)))


UNDEFINED = "undefined"


def relative_change_report(orig: Mapping[str, float], compressed: Mapping[str, float]) -> dict:
    """Per-metric ``100 * (compressed - original) / |original|``; zero or
    non-finite originals are reported as ``"undefined"``."""
    if set(orig) != set(compressed):
        raise ContractError(f"metric keys differ: {sorted(set(orig) ^ set(compressed))}")
    out: dict = {}
    for k in orig:
        o, c = orig[k], compressed[k]
        if isinstance(o, str) or isinstance(c, str) or o == 0 or not np.isfinite(o) or not np.isfinite(c):
            out[k] = UNDEFINED
        else:
            out[k] = 100.0 * (c - o) / abs(o)
    return out


def field_metrics(pred: np.ndarray, target: np.ndarray, cfg: LossConfig) -> dict:
    """Dataset-mean metrics for flattened predictions ``(N, C*H*W)``.

    ``sobolev_loss`` is evaluated even when ``cfg.sobolev_scale`` is zero;
    divergence/vorticity metrics are only defined for 2-channel fields.
    """
    c, h, w, sp = _grid_of(cfg, np.asarray(pred).shape[-1])
    out: dict = {
        "base_loss": float(np.mean(base_loss(pred, target, cfg.base_kind))),
        "sobolev_loss": float(np.mean(sobolev_loss(pred, target, cfg))),
    }
    if c == 2:
        pv = np.asarray(pred).reshape(-1, c, h, w)
        tv = np.asarray(target).reshape(-1, c, h, w)
        out["div_free_error"] = float(np.mean([div_free_error(GridField(x, sp)) for x in pv]))
        out["vorticity_error"] = float(
            np.mean([vorticity_error(GridField(x, sp), GridField(y, sp)) for x, y in zip(pv, tv)])
        )
    else:
        out["div_free_error"] = UNDEFINED
        out["vorticity_error"] = UNDEFINED
    return out


def flatten_fields(fields: Sequence[GridField]) -> np.ndarray:
    return np.stack([f.data.ravel() for f in fields])
