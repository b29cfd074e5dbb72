"""PEHE, a classifier-based discrepancy probe and step-2 design diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import TreatmentDataset
from .errors import InputShapeError, ProbeError
from .nn import Adam, LayerStack, _backprop, _forward_cache, add_intercept, init_stack
from .training import mixup_augment, represent


def _predict(predictor, x):
    fn = getattr(predictor, "cate", predictor)
    return np.asarray(fn(x), dtype=float).ravel()


def pehe_hat(predictor, x_test, tau_ref) -> float:
    """Mean squared CATE error on the test rows; ``predictor`` is a callable or has ``.cate``."""
    tau_ref = np.asarray(tau_ref, dtype=float).ravel()
    pred = _predict(predictor, np.atleast_2d(x_test))
    if pred.shape != tau_ref.shape or len(tau_ref) == 0:
        raise InputShapeError(f"{len(pred)} predictions vs {len(tau_ref)} reference values")
    diff = pred - tau_ref
    return float(np.mean(diff * diff))


def sqrt_pehe(predictor, x_test, tau_ref) -> float:
    return math.sqrt(pehe_hat(predictor, x_test, tau_ref))


@dataclass(frozen=True)
class PeheReport:
    estimator: str
    sqrt_pehe_mean: float
    sqrt_pehe_sd: float
    n_reps: int
    grid_point: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, estimator: str, values, grid_point=None) -> "PeheReport":
        v = np.asarray(values, dtype=float)
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        return cls(estimator, float(np.mean(v)), sd, len(v), dict(grid_point or {}))


# discrepancy probe -----------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    train_fraction: float = 0.7
    hidden: tuple[int, ...] = (16,)
    epochs: int = 200
    learning_rate: float = 1e-2
    min_rows: int = 10


def error_sum(scores_a, scores_b, threshold: float = 0.5) -> float:
    """Class-conditional error rates added up; class ``a`` is predicted by ``score < threshold``."""
    return float(np.mean(np.asarray(scores_a) >= threshold) + np.mean(np.asarray(scores_b) < threshold))


def h_divergence_from_error(err: float) -> float:
    """``2 (1 - min(err, 1))``; a constant classifier has error sum 1, so the estimate is in [0, 2]."""
    return 2.0 * (1.0 - min(float(err), 1.0))


def _split(n, frac, rng):
    perm = rng.permutation(n)
    k = min(max(1, int(round(frac * n))), n - 1)
    return perm[:k], perm[k:]


def h_div_probe(phi, x_a, x_b, cfg: ProbeConfig = ProbeConfig(), rng=None) -> float:
    """Held-out hard-error H-divergence estimate between ``phi(x_a)`` and ``phi(x_b)``.

    ``phi`` is a callable on raw covariates, a trained representation
    (``LayerStack`` whose input has the extra constant feature) or ``None``
    for the identity.  A fresh sigmoid classifier is trained on a
    ``train_fraction`` split with class-balanced cross-entropy; features are
    standardized with the training-split moments.
    """
    rng = np.random.default_rng(rng)
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    x_b = np.atleast_2d(np.asarray(x_b, dtype=float))
    if x_a.shape[0] < cfg.min_rows or x_b.shape[0] < cfg.min_rows:
        raise ProbeError(f"need at least {cfg.min_rows} rows per sample")
    za, zb = _apply(phi, x_a), _apply(phi, x_b)
    tr_a, te_a = _split(len(za), cfg.train_fraction, rng)
    tr_b, te_b = _split(len(zb), cfg.train_fraction, rng)
    train = np.vstack([za[tr_a], zb[tr_b]])
    mu, sd = train.mean(axis=0), train.std(axis=0)
    sd[sd == 0] = 1.0

    def prep(z):
        return add_intercept((z - mu) / sd)

    feats = prep(train)
    labels = np.concatenate([np.zeros(len(tr_a)), np.ones(len(tr_b))])
    # class-balanced weights so each sample counts half
    wts = np.where(labels == 0, 0.5 / len(tr_a), 0.5 / len(tr_b))[:, None]
    net = init_stack((feats.shape[1], *cfg.hidden, 1), rng, "sigmoid")
    weights = [w.copy() for w in net.weights]
    opt = Adam(weights, cfg.learning_rate)
    for _ in range(cfg.epochs):
        inputs, p = _forward_cache(weights, "sigmoid", feats)
        grads, _ = _backprop(weights, inputs, wts * (p - labels[:, None]))
        opt.step(grads)
    _, pa = _forward_cache(weights, "sigmoid", prep(za[te_a]))
    _, pb = _forward_cache(weights, "sigmoid", prep(zb[te_b]))
    return h_divergence_from_error(error_sum(pa[:, 0], pb[:, 0]))


def _apply(phi, x):
    if phi is None:
        return x
    if isinstance(phi, LayerStack):
        return represent(phi, x) if phi.input_dim == x.shape[1] + 1 else phi(x)
    return np.atleast_2d(np.asarray(phi(x), dtype=float))


# eigen diagnostics -----------------------------------------------------------

def jacobi_eigenvalues(a, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputShapeError("expected a square matrix")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise InputShapeError("matrix is not symmetric")
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = a[:, p].copy()
                rot_q = a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p = a[p, :].copy()
                rot_q = a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
    return np.sort(np.diag(a))


def arm_covariance(z, t, arm: int) -> np.ndarray:
    """``Z_t' Z_t / n`` with ``n`` the size of the whole randomized sample."""
    z = np.atleast_2d(z)
    rows = np.asarray(t) == arm
    if not np.any(rows):
        raise ValueError(f"arm t={arm} has no rows")
    zt = z[rows]
    return zt.T @ zt / z.shape[0]


def min_eig_diagnostic(phi, rand: TreatmentDataset, arm: int) -> float:
    """Smallest eigenvalue of the arm's representation second-moment matrix.

    A positive value is sufficient for the compatibility condition of the
    step-2 Lasso.
    """
    z = _apply(phi, rand.x)
    return float(jacobi_eigenvalues(arm_covariance(z, rand.t, arm))[0])


@dataclass(frozen=True)
class DiagnosticsRecord:
    h_div: float
    min_eig_by_arm: tuple[float, float]
    max_weight_norm: float

    def __post_init__(self):
        if not 0.0 <= self.h_div <= 2.0:
            raise ValueError("h_div must lie in [0, 2]")


def diagnostics(phi: LayerStack, x_obs, rand: TreatmentDataset, rng=None,
                mixup_alpha: float = 0.2, probe: ProbeConfig = ProbeConfig()) -> DiagnosticsRecord:
    """Probe interpolated vs observational representations and the step-2 design."""
    rng = np.random.default_rng(rng)
    x_obs = np.atleast_2d(x_obs)
    x_mix = mixup_augment(rand.x, x_obs, mixup_alpha, len(x_obs), rng)
    h = h_div_probe(phi, x_mix, x_obs, probe, rng)
    eig = tuple(min_eig_diagnostic(phi, rand, arm) for arm in (0, 1))
    return DiagnosticsRecord(h, eig, phi.max_norm_1inf())
