"""Small dense linear-algebra helpers working on stacks of d x d matrices.

Symmetric positive definite systems are solved after a symmetric diagonal
(Jacobi) rescaling.  h-kernels of integrated processes have entries of very
different orders of magnitude on short intervals, and the rescaling keeps the
Cholesky factorisation well conditioned without changing the result.
"""
from __future__ import annotations

import numpy as np

from .errors import DegeneracyError

DEFAULT_COND_BOUND = 1e12


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _scaled(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    if np.any(~np.isfinite(a)):
        raise DegeneracyError(f"{what}: non-finite entries")
    if np.any(diag <= 0.0):
        raise DegeneracyError(f"{what}: non-positive diagonal entry {diag.min():.3e}")
    scale = np.sqrt(diag)
    return a / (scale[..., :, None] * scale[..., None, :]), scale


def check_condition(a: np.ndarray, what: str, bound: float = DEFAULT_COND_BOUND) -> None:
    cond = np.linalg.cond(a)
    worst = float(np.max(cond)) if np.ndim(cond) else float(cond)
    if not np.isfinite(worst) or worst > bound:
        raise DegeneracyError(f"{what}: condition number {worst:.3e} exceeds {bound:.1e}")


def spd_cholesky(a: np.ndarray, what: str = "matrix", bound: float = DEFAULT_COND_BOUND) -> np.ndarray:
    """Lower Cholesky factor with positive diagonal of a (stack of) SPD matrices."""
    a = symmetrize(np.asarray(a, dtype=float))
    scaled, scale = _scaled(a, what)
    check_condition(scaled, what, bound)
    try:
        chol = np.linalg.cholesky(scaled)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(f"{what}: not positive definite") from exc
    return scale[..., :, None] * chol


def spd_solve(a: np.ndarray, b: np.ndarray, what: str = "matrix", bound: float = DEFAULT_COND_BOUND) -> np.ndarray:
    """Return a^{-1} b for SPD a using the rescaled Cholesky factor (no explicit inverse)."""
    a = symmetrize(np.asarray(a, dtype=float))
    scaled, scale = _scaled(a, what)
    check_condition(scaled, what, bound)
    try:
        chol = np.linalg.cholesky(scaled)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(f"{what}: not positive definite") from exc
    rhs = np.asarray(b, dtype=float) / scale[..., :, None]
    y = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)
    return x / scale[..., :, None]


def right_spd_solve(b: np.ndarray, a: np.ndarray, what: str = "matrix", bound: float = DEFAULT_COND_BOUND) -> np.ndarray:
    """Return b a^{-1} for SPD a."""
    return np.swapaxes(spd_solve(a, np.swapaxes(b, -1, -2), what, bound), -1, -2)


def guarded_inverse(a: np.ndarray, what: str = "matrix", bound: float = DEFAULT_COND_BOUND) -> np.ndarray:
    """LU-based inverse of a general (stack of) square matrices with a condition guard."""
    a = np.asarray(a, dtype=float)
    check_condition(a, what, bound)
    return np.linalg.inv(a)
