"""Comparison estimators.

* ``tau_unc`` / ``tau_conf``: a two-head network fitted on one source only.
* ``tau_avg``: pointwise convex combination of the two.
* ``tau_weight``: one network on the pooled rows, randomized rows weighted by ``Lambda``.
* Kallus-style two-step estimators: a base model from the observational
  rows plus a linear correction in ``[x, 1]`` fitted on the randomized rows,
  either to the IPW-transformed outcome (cate target) or per arm to the
  outcome residuals (outcome target).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import CombinedData, TreatmentDataset
from .errors import FitError, InputShapeError, NumericError
from .nn import LayerStack, add_intercept, dumps_stack, loads_stack
from .training import TrainConfig, represent, train_two_head

log = logging.getLogger(__name__)

PROPENSITY_CLIP = (0.01, 0.99)
MODEL_FORMAT = "cornet-model v1"


@dataclass(frozen=True)
class TwoHeadModel:
    phi: LayerStack
    heads: np.ndarray    # (2, d_phi)

    def outcome(self, x, t) -> np.ndarray:
        z = np.atleast_2d(self._represent(x))
        return np.einsum("ij,ij->i", z, self.heads[np.asarray(t, dtype=int).ravel()])

    def cate(self, x):
        return self._represent(x) @ (self.heads[1] - self.heads[0])

    def _represent(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.phi.input_dim - 1:
            raise InputShapeError(f"expected {self.phi.input_dim - 1} covariates, got {x.shape[-1]}")
        z = represent(self.phi, x)
        return z[0] if x.ndim == 1 else z


def _two_head(ds: TreatmentDataset, cfg: TrainConfig, rng, what: str) -> TwoHeadModel:
    res = train_two_head(ds.x, ds.t, ds.y, cfg, rng, what=what)
    return TwoHeadModel(res.phi, res.heads)


def fit_tau_unc(rand: TreatmentDataset, cfg: TrainConfig = TrainConfig(), rng=None) -> TwoHeadModel:
    """Two-head network on the randomized rows only."""
    return _two_head(rand, cfg, rng, "randomized data")


def fit_tau_conf(obs: TreatmentDataset, cfg: TrainConfig = TrainConfig(), rng=None) -> TwoHeadModel:
    """Two-head network on the observational rows only (CorNet step 1 without balancing)."""
    return _two_head(obs, cfg, rng, "observational data")


@dataclass(frozen=True)
class AveragedModel:
    unc: TwoHeadModel
    conf: TwoHeadModel
    lam: float

    def cate(self, x):
        if self.lam == 0.0:
            return self.unc.cate(x)
        if self.lam == 1.0:
            return self.conf.cate(x)
        return (1.0 - self.lam) * self.unc.cate(x) + self.lam * self.conf.cate(x)


def make_tau_avg(m_unc: TwoHeadModel, m_conf: TwoHeadModel, lam: float) -> AveragedModel:
    """``(1 - lam) * tau_unc + lam * tau_conf``; the endpoints return the inputs unchanged."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    return AveragedModel(m_unc, m_conf, float(lam))


# weighted risk ---------------------------------------------------------------

def effective_lambda(n_conf: int, n_unc: int, Lambda: float) -> float:
    """Share of the observational rows in the weighted risk."""
    return n_conf / (Lambda * n_unc + n_conf)


def pooled_with_weights(data: CombinedData, Lambda: float):
    """Stack obs and rand rows; weights 1 for obs and ``Lambda`` for rand."""
    if Lambda < 0:
        raise ValueError("Lambda must be nonnegative")
    x = np.vstack([data.obs.x, data.rand.x])
    t = np.concatenate([data.obs.t, data.rand.t])
    y = np.concatenate([data.obs.y, data.rand.y])
    w = np.concatenate([np.ones(data.obs.n), np.full(data.rand.n, float(Lambda))])
    return x, t, y, w


def squared_loss(model, ds: TreatmentDataset) -> float:
    r = model.outcome(ds.x, ds.t) - ds.y
    return float(np.mean(r * r))


def weighted_objective(model, data: CombinedData, Lambda: float) -> float:
    """``(sum_conf l_i + Lambda * sum_unc l_i) / (Lambda * n_unc + n_conf)``."""
    r_c = model.outcome(data.obs.x, data.obs.t) - data.obs.y
    r_u = model.outcome(data.rand.x, data.rand.t) - data.rand.y
    return float((r_c @ r_c + Lambda * (r_u @ r_u)) / (Lambda * data.rand.n + data.obs.n))


def fit_tau_weight(data: CombinedData, Lambda: float, cfg: TrainConfig = TrainConfig(), rng=None):
    """Pooled two-head fit minimizing :func:`weighted_objective`.

    Returns ``(model, info)`` where ``info`` holds the effective lambda and
    the training log.
    """
    x, t, y, w = pooled_with_weights(data, Lambda)
    res = train_two_head(x, t, y, cfg, rng, sample_weight=w, what="pooled data")
    info = {"effective_lambda": effective_lambda(data.obs.n, data.rand.n, Lambda),
            "Lambda": float(Lambda), "log": res.log}
    return TwoHeadModel(res.phi, res.heads), info


# ridge / logistic ------------------------------------------------------------

def default_ridge_penalty(z) -> float:
    z = np.atleast_2d(z)
    return 1e-2 * float(np.trace(z.T @ z)) / z.shape[1]


def ridge_fit(z, y, lam: float) -> np.ndarray:
    """Solve ``(Z'Z + lam I) b = Z'y``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    gram = z.T @ z + lam * np.eye(z.shape[1])
    if lam == 0 and np.linalg.matrix_rank(gram) < z.shape[1]:
        raise NumericError("singular normal equations at lam = 0; use lam > 0")
    return np.linalg.solve(gram, z.T @ y)


def logistic_fit(z, labels, max_iter: int = 100, grad_tol: float = 1e-6) -> np.ndarray:
    """Maximum-likelihood logistic regression by damped Newton steps.

    The gradient is that of the mean log-likelihood.  Separable data has no
    finite optimum; the last iterate is returned with a warning.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    labels = np.asarray(labels, dtype=float).ravel()
    n, p = z.shape

    def loglik(b):
        s = z @ b
        return float(np.mean(labels * s - np.logaddexp(0.0, s)))

    b = np.zeros(p)
    ll = loglik(b)
    for _ in range(max_iter):
        prob = 1.0 / (1.0 + np.exp(-(z @ b)))
        grad = z.T @ (labels - prob) / n
        if np.linalg.norm(grad) < grad_tol:
            return b
        hess = (z * (prob * (1.0 - prob))[:, None]).T @ z / n + 1e-10 * np.eye(p)
        step = np.linalg.solve(hess, grad)
        s = 1.0
        while s > 1e-8:
            cand = b + s * step
            ll_cand = loglik(cand)
            if ll_cand >= ll:
                b, ll = cand, ll_cand
                break
            s *= 0.5
        else:
            break
    log.warning("logistic_fit stopped before the gradient tolerance (separable data?)")
    return b


def signed_weights(t, e) -> np.ndarray:
    """``q = t/e - (1 - t)/(1 - e)``."""
    t = np.asarray(t, dtype=float)
    return t / e - (1.0 - t) / (1.0 - e)


# Kallus-style two-step -------------------------------------------------------

@dataclass(frozen=True)
class RidgeOutcome:
    """Per-arm ridge outcome models on ``[x, 1]``."""

    coef: np.ndarray   # (2, d + 1)

    def outcome(self, x, t):
        return np.einsum("ij,ij->i", add_intercept(np.atleast_2d(x)),
                         self.coef[np.asarray(t, dtype=int).ravel()])

    def cate(self, x):
        return add_intercept(np.asarray(x, dtype=float)) @ (self.coef[1] - self.coef[0])


def fit_ridge_outcome(obs: TreatmentDataset) -> RidgeOutcome:
    coef = []
    for arm in (0, 1):
        rows = obs.t == arm
        if not np.any(rows):
            raise FitError(f"observational data has no samples in arm t={arm}")
        z = add_intercept(obs.x[rows])
        coef.append(ridge_fit(z, obs.y[rows], default_ridge_penalty(z)))
    return RidgeOutcome(np.array(coef))


@dataclass(frozen=True)
class KallusModel:
    base: str            # "ridge" | "nn"
    target: str          # "cate" | "outcome"
    propensity: str      # "known" | "logistic"
    f: object            # RidgeOutcome or TwoHeadModel
    theta: np.ndarray    # (d + 1,) for cate, (2, d + 1) for outcome; last entry is the intercept

    def cate(self, x):
        xa = add_intercept(np.asarray(x, dtype=float))
        if self.target == "cate":
            return self.f.cate(x) + xa @ self.theta
        return self.f.cate(x) + xa @ (self.theta[1] - self.theta[0])


def _lstsq(z, y, what):
    if z.shape[0] < z.shape[1]:
        log.info("%s: %d rows < %d columns, using the minimum-norm solution", what, *z.shape)
    return np.linalg.lstsq(z, y, rcond=None)[0]


def fit_kallus(data: CombinedData, base: str = "nn", target: str = "outcome",
               propensity: str = "known", e: float = 0.5, cfg: TrainConfig = TrainConfig(),
               rng=None, f=None) -> KallusModel:
    """Base model from observational rows, linear correction from randomized rows.

    cate target: ``theta = argmin sum (q_i y_i - f_tau(x_i) - theta.[x_i, 1])^2``.
    outcome target: per arm, ``theta_t = argmin sum_{t_i = t} (y_i - f(x_i, t) - theta.[x_i, 1])^2``
    and ``tau(x) = f(x, 1) + theta_1.[x, 1] - f(x, 0) - theta_0.[x, 1]``.
    ``propensity`` only enters the cate target.  A prefitted base can be
    passed as ``f``.
    """
    if base not in ("ridge", "nn") or target not in ("cate", "outcome"):
        raise ValueError(f"unknown Kallus variant base={base!r}, target={target!r}")
    if propensity not in ("known", "logistic"):
        raise ValueError(f"propensity must be 'known' or 'logistic', got {propensity!r}")
    rand = data.rand
    for arm in (0, 1):
        if not np.any(rand.t == arm):
            raise FitError(f"randomized data has no samples in arm t={arm}")
    if f is None:
        f = fit_ridge_outcome(data.obs) if base == "ridge" else fit_tau_conf(data.obs, cfg, rng)
    xa = add_intercept(rand.x)

    if target == "cate":
        if propensity == "known":
            if not 0.0 < e < 1.0:
                raise ValueError("known propensity must lie in (0, 1)")
            ehat = np.full(rand.n, float(e))
        else:
            ehat = 1.0 / (1.0 + np.exp(-(xa @ logistic_fit(xa, rand.t))))
        lo, hi = PROPENSITY_CLIP
        if np.any((ehat < lo) | (ehat > hi)):
            log.warning("clipping %d propensity values to %s", int(np.sum((ehat < lo) | (ehat > hi))),
                        PROPENSITY_CLIP)
            ehat = np.clip(ehat, lo, hi)
        q = signed_weights(rand.t, ehat)
        theta = _lstsq(xa, q * rand.y - f.cate(rand.x), "cate correction")
    else:
        theta = np.zeros((2, xa.shape[1]))
        for arm in (0, 1):
            rows = rand.t == arm
            resid = rand.y[rows] - f.outcome(rand.x[rows], np.full(rows.sum(), arm))
            theta[arm] = _lstsq(xa[rows], resid, f"outcome correction arm {arm}")
    return KallusModel(base, target, propensity, f, theta)


# persistence -----------------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, TwoHeadModel):
        return {"format": MODEL_FORMAT, "kind": "two_head", "phi": dumps_stack(model.phi),
                "heads": model.heads.tolist()}
    if isinstance(model, AveragedModel):
        return {"format": MODEL_FORMAT, "kind": "average", "lam": model.lam,
                "unc": model_to_dict(model.unc), "conf": model_to_dict(model.conf)}
    if isinstance(model, KallusModel):
        f = ({"kind": "ridge", "coef": model.f.coef.tolist()} if isinstance(model.f, RidgeOutcome)
             else model_to_dict(model.f))
        return {"format": MODEL_FORMAT, "kind": "kallus", "base": model.base,
                "target": model.target, "propensity": model.propensity,
                "f": f, "theta": np.asarray(model.theta).tolist()}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "two_head":
        return TwoHeadModel(loads_stack(doc["phi"]), np.array(doc["heads"]))
    if kind == "average":
        return AveragedModel(model_from_dict(doc["unc"]), model_from_dict(doc["conf"]), doc["lam"])
    if kind == "ridge":
        return RidgeOutcome(np.array(doc["coef"]))
    if kind == "kallus":
        return KallusModel(doc["base"], doc["target"], doc["propensity"],
                           model_from_dict(doc["f"]), np.array(doc["theta"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")
