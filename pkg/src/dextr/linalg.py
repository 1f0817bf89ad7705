"""Singular values of feature matrices via a Jacobi eigensolve of the gram matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

JACOBI_TOL = 1e-12
MAX_SWEEPS = 100
RANK_TOL = 1e-14


class NotSymmetricError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SpectrumResult:
    singular_values: np.ndarray  # descending
    sigma_max: float
    sigma_min: float
    inv_cond: float


def gram(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = x @ x.T
    return 0.5 * (g + g.T)


def sym_eig(g: np.ndarray, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix.

    Raises :class:`NotSymmetricError` if ``g`` is asymmetric beyond 1e-10
    (relative to its largest entry) and :class:`ConvergenceError` if Jacobi
    does not converge within ``max_sweeps``.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {g.shape}")
    scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    if np.abs(g - g.T).max(initial=0.0) > 1e-10 * scale:
        raise NotSymmetricError("matrix is not symmetric within 1e-10")
    if not np.isfinite(g).all():
        raise ConvergenceError("non-finite entries")
    eigs, sweeps = kernels.jacobi_eigvalsh(g, JACOBI_TOL, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    eigs = np.sort(np.asarray(eigs))
    return np.maximum(eigs, 0.0)


def spectrum(x: np.ndarray) -> SpectrumResult:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 1:
        raise ValueError(f"feature matrix must be 2-D and non-empty, got {x.shape}")
    rows, cols = x.shape
    lam = sym_eig(gram(x) if rows <= cols else gram(x.T))
    lam_max = lam[-1]
    lam = np.where(lam < RANK_TOL * lam_max, 0.0, lam)
    sv = np.sqrt(lam)[::-1].copy()
    smax, smin = float(sv[0]), float(sv[-1])
    inv = smin / smax if smax > 0.0 else 0.0
    return SpectrumResult(sv, smax, smin, min(inv, 1.0))
