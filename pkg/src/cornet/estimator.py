"""The two-step CorNet estimator.

Step 1 fits a representation and a confounded head per arm on the
observational rows, optionally balancing the representation against the
randomized covariates.  Step 2 keeps the representation fixed and fits a
sparse per-arm correction of the heads on the randomized rows::

    delta_t = argmin (1/n_t) sum_{t_i = t} (phi(x_i).(w_c[t] + delta) - y_i)^2 + lam * ||delta||_1

The CATE estimate is ``phi(x).(w_c[1] + delta[1] - w_c[0] - delta[0])``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import CombinedData, TreatmentDataset
from .errors import FitError, InputShapeError
from .lasso import LassoProblem, LassoSolution, lasso_cd
from .nn import LayerStack, dumps_stack, loads_stack
from .training import Balancing, TrainConfig, represent, train_two_head

MODEL_FORMAT = "cornet-model v1"


@dataclass(frozen=True)
class Step1Config:
    """Representation training.  ``lambda_d=None`` means "couple to lambda_delta"."""

    lambda_d: float | None = None
    mixup_alpha: float = 0.2
    m: int | None = None              # interpolated rows per epoch; None -> n_conf
    train: TrainConfig = field(default_factory=TrainConfig)
    adversary_hidden: tuple[int, ...] = (16,)

    def __post_init__(self):
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be at least 1")
        if self.lambda_d is not None and self.lambda_d < 0:
            raise ValueError("lambda_d must be nonnegative")


@dataclass(frozen=True)
class Step2Config:
    lambda_delta: float | None = None   # None -> default_lambda_delta
    tol: float = 1e-8
    max_sweeps: int = 10_000

    def __post_init__(self):
        if self.lambda_delta is not None and self.lambda_delta < 0:
            raise ValueError("lambda_delta must be nonnegative")


@dataclass(frozen=True)
class Step1Result:
    phi: LayerStack
    w_c: np.ndarray
    adversary: LayerStack | None
    log: list
    lambda_d: float


@dataclass(frozen=True)
class CornetModel:
    phi: LayerStack
    w_c: np.ndarray      # (2, d_phi), row t = confounded head of arm t
    delta: np.ndarray    # (2, d_phi), row t = bias correction of arm t
    lambda_d: float = 0.0
    lambda_delta: float = 0.0

    def __post_init__(self):
        w_c = np.asarray(self.w_c, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        k = self.phi.output_dim
        if w_c.shape != (2, k) or delta.shape != (2, k):
            raise InputShapeError(f"heads must have shape (2, {k})")
        object.__setattr__(self, "w_c", w_c)
        object.__setattr__(self, "delta", delta)

    @property
    def d(self) -> int:
        return self.phi.input_dim - 1

    @property
    def w_u(self) -> np.ndarray:
        return self.w_c + self.delta

    def cate(self, x) -> np.ndarray:
        return predict_cate(self, x)

    def confounded_cate(self, x) -> np.ndarray:
        """CATE of the step-1 heads alone (delta ignored)."""
        z = self._represent(x)
        return z @ (self.w_c[1] - self.w_c[0])

    def outcome(self, x, t) -> np.ndarray:
        z = self._represent(x)
        return np.einsum("ij,ij->i", np.atleast_2d(z), self.w_u[np.asarray(t, dtype=int).ravel()])

    def _represent(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise InputShapeError(f"expected {self.d} covariates, got {x.shape[-1]}")
        z = represent(self.phi, x)
        return z[0] if x.ndim == 1 else z


def predict_cate(model: CornetModel, x):
    """``phi(x).(w_c[1] + delta[1] - w_c[0] - delta[0])`` for a row or a batch."""
    z = model._represent(x)
    return z @ (model.w_u[1] - model.w_u[0])


def default_lambda_delta(d_phi: int, n_unc: int) -> float:
    """``sqrt(log(d_phi) / (d_phi * log(n_unc)))``, natural logs."""
    if d_phi < 2 or n_unc < 3:
        raise ValueError(f"need d_phi >= 2 and n_unc >= 3, got d_phi={d_phi}, n_unc={n_unc}")
    return math.sqrt(math.log(d_phi) / (d_phi * math.log(n_unc)))


def resolve_lambdas(step1: Step1Config, step2: Step2Config, d_phi: int, n_unc: int):
    """Fill in unset penalties.

    lambda_delta falls back to the closed-form default; lambda_d falls back
    to whatever lambda_delta ends up being.
    """
    lam_delta = step2.lambda_delta
    if lam_delta is None:
        lam_delta = default_lambda_delta(d_phi, n_unc)
    lam_d = lam_delta if step1.lambda_d is None else step1.lambda_d
    return float(lam_d), float(lam_delta)


def fit_step1(data: CombinedData, cfg: Step1Config, rng, lambda_d: float | None = None) -> Step1Result:
    """Representation plus confounded heads from the observational rows.

    ``lambda_d`` overrides ``cfg.lambda_d``; if both are unset the penalty is 0.
    """
    lam = cfg.lambda_d if lambda_d is None else lambda_d
    lam = 0.0 if lam is None else float(lam)
    balancing = None
    if lam > 0:
        balancing = Balancing(data.rand.x, lam, cfg.mixup_alpha, cfg.m, cfg.adversary_hidden)
    res = train_two_head(data.obs.x, data.obs.t, data.obs.y, cfg.train, rng,
                         balancing=balancing, what="observational data")
    return Step1Result(res.phi, res.heads, res.adversary, res.log, lam)


def _check_arm(rand: TreatmentDataset, arm: int):
    if not np.any(rand.t == arm):
        raise FitError(f"randomized data has no samples in arm t={arm}")


def fit_step2(phi: LayerStack, w_c, rand: TreatmentDataset, cfg: Step2Config = Step2Config(),
              full_output: bool = False):
    """Per-arm Lasso on the randomized rows; returns ``delta`` with row t for arm t.

    With ``full_output`` also returns the two :class:`LassoSolution` objects.
    """
    w_c = np.asarray(w_c, dtype=float)
    lam = cfg.lambda_delta
    if lam is None:
        lam = default_lambda_delta(phi.output_dim, rand.n)
    for arm in (0, 1):
        _check_arm(rand, arm)
    z = represent(phi, rand.x)
    delta = np.zeros_like(w_c)
    sols: list[LassoSolution] = []
    for arm in (0, 1):
        rows = rand.t == arm
        resid = rand.y[rows] - z[rows] @ w_c[arm]
        sol = lasso_cd(LassoProblem(z[rows], resid, lam), cfg.tol, cfg.max_sweeps)
        delta[arm] = sol.coef
        sols.append(sol)
    return (delta, sols) if full_output else delta


def step2_objective(phi: LayerStack, w_c, delta, rand: TreatmentDataset, lam: float) -> float:
    """Sum over arms of the per-arm Lasso objectives."""
    z = represent(phi, rand.x)
    total = 0.0
    for arm in (0, 1):
        rows = rand.t == arm
        r = rand.y[rows] - z[rows] @ (w_c[arm] + delta[arm])
        total += float(r @ r / rows.sum() + lam * np.abs(delta[arm]).sum())
    return total


def fit_cornet(data: CombinedData, step1: Step1Config = Step1Config(),
               step2: Step2Config = Step2Config(), rng=None,
               step1_result: Step1Result | None = None) -> CornetModel:
    """Run both steps.  A precomputed ``step1_result`` skips step 1."""
    lam_d, lam_delta = resolve_lambdas(step1, step2, step1.train.d_phi, data.rand.n)
    for arm in (0, 1):
        _check_arm(data.rand, arm)
    if step1_result is None:
        step1_result = fit_step1(data, step1, rng, lambda_d=lam_d)
    delta = fit_step2(step1_result.phi, step1_result.w_c, data.rand,
                      Step2Config(lam_delta, step2.tol, step2.max_sweeps))
    return CornetModel(step1_result.phi, step1_result.w_c, delta, step1_result.lambda_d, lam_delta)


# persistence ---------------------------------------------------------------

def model_to_dict(model: CornetModel) -> dict:
    return {"format": MODEL_FORMAT, "kind": "cornet",
            "phi": dumps_stack(model.phi),
            "w_c": model.w_c.tolist(), "delta": model.delta.tolist(),
            "lambda_d": model.lambda_d, "lambda_delta": model.lambda_delta}


def model_from_dict(doc: dict) -> CornetModel:
    if doc.get("format") != MODEL_FORMAT or doc.get("kind") != "cornet":
        raise ValueError("not a serialized CorNet model")
    return CornetModel(loads_stack(doc["phi"]), np.array(doc["w_c"]), np.array(doc["delta"]),
                       doc["lambda_d"], doc["lambda_delta"])


def save_model(model: CornetModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")


def load_model(path) -> CornetModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
