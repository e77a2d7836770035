"""Dense float64 kernels: SVD, jittered Cholesky with eigendecomposition
fallback, and inverse application of the resulting factors.

Matrices are plain 2-D ``numpy.ndarray`` values of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from .errors import ContractError, NumericalError

DEFAULT_JITTER_SCHEDULE: tuple[float, ...] = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)

FactorMode = Literal["cholesky", "evd_fallback"]
Side = Literal[
    "left_inverse",
    "left_inverse_transpose",
    "right_inverse",
    "right_inverse_transpose",
]

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


@dataclass(frozen=True)
class FactorResult:
    """``factor @ factor.T`` reproduces the (jittered) input matrix."""

    factor: np.ndarray
    mode: FactorMode
    jitter_used: float = 0.0

    @property
    def order(self) -> int:
        return self.factor.shape[0]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError(f"{name} has non-finite entries")
    return m


def svd(a, role: str = "matrix") -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    The largest-magnitude entry of every left singular vector is made
    nonnegative (the matching row of ``vt`` is flipped with it).
    """
    m = as_matrix(a, role)
    if m.size == 0:
        raise ContractError(f"{role} is empty (shape {m.shape})")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of {role} with shape {m.shape} did not converge") from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u * signs, s, vt * signs[:, None])


def truncated_svd(a, k: int, role: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Best rank-``k`` approximation of ``a`` as ``(U_k S_k^1/2, S_k^1/2 V_k^T)``."""
    m = as_matrix(a, role)
    r = min(m.shape)
    if not 1 <= k <= r:
        raise ContractError(f"rank k={k} out of range [1, {r}] for {role} {m.shape}")
    res = svd(m, role)
    root = np.sqrt(res.singular_values[:k])
    return res.u[:, :k] * root, root[:, None] * res.vt[:k]


def _check_symmetric(s: np.ndarray, role: str) -> None:
    if s.shape[0] != s.shape[1]:
        raise ContractError(f"{role} must be square, got {s.shape}")
    scale = np.max(np.abs(s)) if s.size else 0.0
    asym = np.max(np.abs(s - s.T)) if s.size else 0.0
    if asym > 1e-9 * max(scale, np.finfo(np.float64).tiny):
        raise ContractError(f"{role} is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})")


def factor_spd(
    s,
    jitter_schedule: Sequence[float] = DEFAULT_JITTER_SCHEDULE,
    role: str = "matrix",
) -> FactorResult:
    """Factor a symmetric PSD matrix as ``F F^T``.

    Cholesky is attempted with ``eps * mean(diag) * I`` for each ``eps`` in
    the schedule. An attempt is accepted only while the jitter stays
    negligible next to the smallest pivot; otherwise the matrix is treated
    as rank-deficient and factored by eigendecomposition with negative
    eigenvalues clamped to zero, ``F = U diag(sqrt(lam))``.
    """
    m = as_matrix(s, role)
    _check_symmetric(m, role)
    m = 0.5 * (m + m.T)
    d = m.shape[0]
    diag = np.diag(m)
    scale = float(np.mean(diag)) if d else 0.0
    if scale > 0.0:
        roundoff_floor = 1e3 * d * _EPS * float(np.max(diag))
        eye = np.eye(d)
        for eps in jitter_schedule:
            jitter = float(eps) * scale
            try:
                c = np.linalg.cholesky(m + jitter * eye if jitter else m)
            except np.linalg.LinAlgError:
                continue
            pivot = float(np.min(np.diag(c))) ** 2
            if np.all(np.isfinite(c)) and pivot > max(100.0 * jitter, roundoff_floor):
                return FactorResult(c, "cholesky", jitter)
    try:
        lam, u = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of {role} {m.shape} failed") from exc
    lam = np.clip(lam, 0.0, None)
    return FactorResult(u * np.sqrt(lam), "evd_fallback", 0.0)


def _evd_pinv(f: np.ndarray) -> np.ndarray:
    # columns of an EVD factor are orthogonal: F^+ = diag(1/|f_i|^2) F^T
    lam = np.einsum("ij,ij->j", f, f)
    cutoff = 10.0 * max(f.shape[0], 1) * _EPS * (float(np.max(lam)) if lam.size else 0.0)
    inv = np.zeros_like(lam)
    keep = lam > cutoff
    inv[keep] = 1.0 / lam[keep]
    return inv[:, None] * f.T


def solve_factor(f: FactorResult, b, side: Side, role: str = "layer") -> np.ndarray:
    """Apply an inverse of ``f.factor`` to ``b`` without forming it.

    ``left_inverse``: F^-1 b, ``left_inverse_transpose``: F^-T b,
    ``right_inverse``: b F^-1, ``right_inverse_transpose``: b F^-T.
    EVD-fallback factors may be singular and use the pseudo-inverse.
    """
    b = as_matrix(b, "right-hand side")
    fac = f.factor
    n = fac.shape[0]
    contracted = b.shape[0] if side.startswith("left") else b.shape[1]
    if fac.shape != (n, n) or contracted != n:
        raise ContractError(f"factor order {fac.shape} does not match operand {b.shape} for {side}")
    if n == 0:
        return b.copy()
    if f.mode == "evd_fallback":
        p = _evd_pinv(fac)
        return {
            "left_inverse": lambda: p @ b,
            "left_inverse_transpose": lambda: p.T @ b,
            "right_inverse": lambda: b @ p,
            "right_inverse_transpose": lambda: b @ p.T,
        }[side]()

    dg = np.abs(np.diag(fac))
    if np.min(dg) <= 1e-12 * max(float(np.max(dg)), np.finfo(np.float64).tiny):
        raise NumericalError(
            f"{role}: factor is numerically singular (min pivot {np.min(dg):.3e}); "
            "use a larger jitter schedule"
        )
    lower = not np.any(np.triu(fac, 1))
    upper = not np.any(np.tril(fac, -1))
    if not (lower or upper):
        raise ContractError(f"{role}: cholesky-mode factor is not triangular")
    tri = lambda a, rhs, trans: scipy.linalg.solve_triangular(  # noqa: E731
        a, rhs, lower=lower, trans=trans, check_finite=False
    )
    if side == "left_inverse":
        return tri(fac, b, 0)
    if side == "left_inverse_transpose":
        return tri(fac, b, 1)
    if side == "right_inverse":
        # b F^-1 = (F^-T b^T)^T
        return tri(fac, b.T, 1).T
    if side == "right_inverse_transpose":
        return tri(fac, b.T, 0).T
    raise ContractError(f"unknown side {side!r}")
