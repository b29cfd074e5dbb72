"""L1-penalized least squares by cyclic coordinate descent.

Objective::

    (1/n) * ||y - Z b||^2 + lam * ||b||_1

Note the scaling: 1/n on the quadratic (not 1/2n) and no factor on the
penalty.  Under this convention a coordinate update soft-thresholds at
``lam / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass(frozen=True)
class LassoProblem:
    z: np.ndarray
    y: np.ndarray
    lam: float

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if z.shape[0] != y.shape[0] or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError(f"incompatible shapes z{z.shape}, y{y.shape}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y)) and np.isfinite(self.lam)):
            raise NumericError("non-finite entries in lasso problem")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lam", float(self.lam))


@dataclass
class LassoSolution:
    coef: np.ndarray
    iterations: int
    converged: bool
    final_objective: float
    history: list = field(default_factory=list, repr=False)


def soft_threshold(v, lam):
    """``sign(v) * max(|v| - lam, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def lasso_objective(z, y, coef, lam) -> float:
    r = y - z @ coef
    return float(r @ r / len(y) + lam * np.sum(np.abs(coef)))


def lasso_cd(problem: LassoProblem, tol: float = 1e-8, max_sweeps: int = 10_000) -> LassoSolution:
    """Cyclic coordinate descent started from zero.

    Converged means the largest coordinate change in a sweep fell below
    ``tol``.  All-zero columns stay at zero for every ``lam``.
    """
    if tol <= 0 or max_sweeps < 1:
        raise ValueError("need tol > 0 and max_sweeps >= 1")
    z, y, lam = problem.z, problem.y, problem.lam
    n, p = z.shape
    col_sq = np.einsum("ij,ij->j", z, z) / n
    coef = np.zeros(p)
    resid = y.copy()
    history = [lasso_objective(z, y, coef, lam)]
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = coef[j]
            rho = z[:, j] @ resid / n + col_sq[j] * old
            new = soft_threshold(rho, lam / 2.0) / col_sq[j]
            if new != old:
                resid -= z[:, j] * (new - old)
                coef[j] = new
                max_change = max(max_change, abs(new - old))
        history.append(lasso_objective(z, y, coef, lam))
        if not np.isfinite(history[-1]):
            raise NumericError("lasso objective became non-finite")
        if max_change < tol:
            converged = True
            break
    return LassoSolution(coef, sweep, converged, lasso_objective(z, y, coef, lam), history)


def kkt_residuals(z, y, coef, lam):
    """Per-coordinate KKT violation for the objective above.

    Active coordinates: ``|g_j - lam*sign(b_j)|``; inactive: ``max(|g_j| - lam, 0)``
    where ``g = (2/n) Z^T (y - Z b)``.
    """
    z = np.asarray(z, dtype=float)
    g = 2.0 / len(y) * z.T @ (y - z @ coef)
    active = coef != 0
    out = np.where(active, np.abs(g - lam * np.sign(coef)), np.maximum(np.abs(g) - lam, 0.0))
    return out
