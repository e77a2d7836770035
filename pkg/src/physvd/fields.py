"""Periodic uniform-grid fields: synthetic generators, teacher operators and
central finite-difference stencils.

Arrays are laid out ``(..., C, H, W)``; axis -1 is x (columns), axis -2 is y
(rows). All stencils wrap periodically, so ``dx`` and ``dy`` commute and
their adjoints are their negatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class GridField:
    data: np.ndarray  # (C, H, W)
    spacing: float

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ContractError(f"GridField data must be (C, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ContractError("GridField has non-finite entries")
        if not self.spacing > 0:
            raise ContractError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class StencilSet:
    spacing: float
    scheme: str = "central_periodic"

    def dx(self, f: np.ndarray) -> np.ndarray:
        return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * self.spacing)

    def dy(self, f: np.ndarray) -> np.ndarray:
        return (np.roll(f, -1, axis=-2) - np.roll(f, 1, axis=-2)) / (2.0 * self.spacing)

    def dxx(self, f: np.ndarray) -> np.ndarray:
        return (np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)) / self.spacing**2

    def dyy(self, f: np.ndarray) -> np.ndarray:
        return (np.roll(f, -1, axis=-2) - 2.0 * f + np.roll(f, 1, axis=-2)) / self.spacing**2

    def dxy(self, f: np.ndarray) -> np.ndarray:
        return self.dx(self.dy(f))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.dxx(f) + self.dyy(f)


# multi-indices up to order 2, in a fixed enumeration order
MULTI_INDICES: dict[int, tuple[str, ...]] = {0: ("",), 1: ("x", "y"), 2: ("xx", "xy", "yy")}


def apply_multi_index(st: StencilSet, alpha: str, f: np.ndarray) -> np.ndarray:
    if alpha == "":
        return f
    return getattr(st, "d" + alpha)(f)


def apply_multi_index_adjoint(st: StencilSet, alpha: str, f: np.ndarray) -> np.ndarray:
    # first derivatives are skew-adjoint, the second-order ones self-adjoint
    if len(alpha) == 1:
        return -apply_multi_index(st, alpha, f)
    return apply_multi_index(st, alpha, f)


def _field_of(f) -> tuple[np.ndarray, float]:
    if isinstance(f, GridField):
        return f.data, f.spacing
    raise ContractError("expected a GridField")


def fd_derivative(f: GridField, axis: str, stencils: StencilSet | None = None) -> GridField:
    data, h = _field_of(f)
    st = stencils or StencilSet(h)
    if axis not in ("x", "y"):
        raise ContractError(f"axis must be 'x' or 'y', got {axis!r}")
    return GridField(st.dx(data) if axis == "x" else st.dy(data), h)


def _velocity(vel: GridField) -> tuple[np.ndarray, np.ndarray, StencilSet]:
    if vel.channels != 2:
        raise ContractError(f"velocity field needs exactly 2 channels, got {vel.channels}")
    return vel.data[0], vel.data[1], StencilSet(vel.spacing)


def fd_divergence(vel: GridField) -> GridField:
    u, v, st = _velocity(vel)
    return GridField((st.dx(u) + st.dy(v))[None], vel.spacing)


def fd_vorticity(vel: GridField) -> GridField:
    u, v, st = _velocity(vel)
    return GridField((st.dx(v) - st.dy(u))[None], vel.spacing)


# ---------------------------------------------------------------- generators


@dataclass(frozen=True)
class Mode:
    kx: int
    ky: int
    amplitude: float
    phase: float = 0.0


def mode_field(modes: Sequence[Mode], height: int, width: int) -> np.ndarray:
    """Evaluate ``sum_m a_m sin(2 pi (kx x/Lx + ky y/Ly) + phi_m)`` on an H x W grid."""
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    out = np.zeros((height, width))
    for m in modes:
        out += m.amplitude * np.sin(2.0 * np.pi * (m.kx * jj / width + m.ky * ii / height) + m.phase)
    return out


def _grid_dims(grid_dims: Sequence[int]) -> tuple[int, int, int]:
    if len(grid_dims) == 2:
        return 1, int(grid_dims[0]), int(grid_dims[1])
    if len(grid_dims) == 3:
        return int(grid_dims[0]), int(grid_dims[1]), int(grid_dims[2])
    raise ContractError(f"grid_dims must be (H, W) or (C, H, W), got {grid_dims}")


def gen_grf(
    seed,
    grid_dims: Sequence[int],
    num_modes: int = 8,
    decay: float = 2.0,
    spacing: float | None = None,
) -> GridField:
    """Random smooth periodic field: a seeded sum of ``num_modes`` sine modes
    per channel with integer wavenumbers up to Nyquist and amplitudes
    decaying like ``(1 + |k|)^-decay``."""
    if num_modes < 1:
        raise ContractError("num_modes must be >= 1")
    if not decay > 0:
        raise ContractError("decay must be positive")
    c, h, w = _grid_dims(grid_dims)
    rng = np.random.default_rng(seed)
    kmax = max(1, min(h, w) // 2)
    data = np.empty((c, h, w))
    for ch in range(c):
        modes = []
        for _ in range(num_modes):
            kx, ky = 0, 0
            while kx == 0 and ky == 0:
                kx, ky = (int(v) for v in rng.integers(-kmax, kmax + 1, size=2))
            amp = rng.standard_normal() * (1.0 + np.hypot(kx, ky)) ** (-decay)
            modes.append(Mode(kx, ky, amp, rng.uniform(0.0, 2.0 * np.pi)))
        data[ch] = mode_field(modes, h, w)
    return GridField(data, spacing if spacing is not None else 1.0 / w)


def divfree_from_stream(psi: np.ndarray, spacing: float) -> np.ndarray:
    st = StencilSet(spacing)
    return np.stack([st.dy(psi), -st.dx(psi)])


def gen_divfree(
    seed,
    grid_dims: Sequence[int],
    num_modes: int = 8,
    decay: float = 2.0,
    spacing: float | None = None,
) -> GridField:
    """Two-channel velocity ``(u, v) = (D_y psi, -D_x psi)`` from a random
    stream function; its discrete divergence vanishes up to roundoff."""
    _, h, w = _grid_dims(grid_dims)
    if h < 4 or w < 4:
        raise ContractError("gen_divfree needs H, W >= 4")
    psi = gen_grf(seed, (1, h, w), num_modes, decay, spacing)
    return GridField(divfree_from_stream(psi.data[0], psi.spacing), psi.spacing)


# ----------------------------------------------------------------- operators


@dataclass(frozen=True)
class HeatStep:
    nu: float
    dt: float


@dataclass(frozen=True)
class AdvectStep:
    cx: float
    cy: float
    dt: float


def apply_operator(f: GridField, op: HeatStep | AdvectStep) -> GridField:
    st = StencilSet(f.spacing)
    if isinstance(op, HeatStep):
        if op.nu * op.dt / f.spacing**2 > 0.25:
            raise ConfigError(
                f"heat_step unstable: nu*dt/h^2 = {op.nu * op.dt / f.spacing**2:.4g} > 0.25"
            )
        return GridField(f.data + op.nu * op.dt * st.laplacian(f.data), f.spacing)
    if isinstance(op, AdvectStep):
        return GridField(f.data - op.dt * (op.cx * st.dx(f.data) + op.cy * st.dy(f.data)), f.spacing)
    raise ContractError(f"unknown operator {op!r}")


def default_heat_step(spacing: float) -> HeatStep:
    """Heat step at half the explicit stability bound (nu*dt/h^2 = 0.125)."""
    return HeatStep(nu=1.0, dt=0.125 * spacing**2)


# ------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    """Paired input/target fields sharing one grid, each tagged with a
    dataset name drawn from ``tag_names``."""

    inputs: np.ndarray  # (N, C, H, W)
    targets: np.ndarray  # (N, C, H, W)
    tag_index: np.ndarray  # (N,) int64 into tag_names
    tag_names: tuple[str, ...]
    spacing: float
    family: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.tag_index = np.asarray(self.tag_index, dtype=np.int64)
        self.tag_names = tuple(self.tag_names)
        if self.inputs.ndim != 4 or self.inputs.shape != self.targets.shape:
            raise ContractError(
                f"inputs/targets must share shape (N, C, H, W); got {self.inputs.shape}, {self.targets.shape}"
            )
        if self.tag_index.shape != (self.inputs.shape[0],):
            raise ContractError("tag_index must have one entry per sample")
        if len(self.tag_index) and (self.tag_index.min() < 0 or self.tag_index.max() >= len(self.tag_names)):
            raise ContractError("tag_index refers to an undeclared tag")
        if not self.spacing > 0:
            raise ContractError("spacing must be positive")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(self.inputs.shape[1:])  # type: ignore[return-value]

    @property
    def flat_inputs(self) -> np.ndarray:
        return self.inputs.reshape(len(self), -1)

    @property
    def flat_targets(self) -> np.ndarray:
        return self.targets.reshape(len(self), -1)

    def tags(self) -> list[str]:
        return [self.tag_names[i] for i in self.tag_index]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.inputs[idx], self.targets[idx], self.tag_index[idx], self.tag_names, self.spacing, self.family
        )

    def by_tag(self) -> dict[str, "Dataset"]:
        out = {}
        for i, name in enumerate(self.tag_names):
            sel = np.flatnonzero(self.tag_index == i)
            if len(sel):
                out[name] = self.subset(sel)
        return out


def gen_inputs(
    seed,
    n: int,
    grid_dims: Sequence[int],
    num_modes: int = 8,
    decay: float = 2.0,
    divfree: bool = False,
) -> np.ndarray:
    """``n`` independent seeded input fields, shape (n, C, H, W)."""
    c, h, w = _grid_dims(grid_dims)
    if divfree and c != 2:
        raise ConfigError("divergence-free inputs need exactly 2 channels")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(n)
    gen = gen_divfree if divfree else gen_grf
    dims = (h, w) if divfree else (c, h, w)
    return np.stack([gen(s, dims, num_modes, decay).data for s in seeds]) if n else np.zeros((0, c, h, w))
