"""Synthetic data-generating processes, CSV I/O and the confounding protocol.

Every synthetic scenario shares the same outcome model::

    Y_conf = phi_c(X_conf) . w_c[T] + eps
    Y_unc  = phi_u(X_unc)  . w_u[T] + eps,      w_u[t] = w_c[t] + delta[t]

with ``T ~ Bernoulli(1/2)`` in both samples.  In the shared-representation
scenarios ``phi_c == phi_u``.  Arrays indexed by arm use ``arr[t]`` with
``t in {0, 1}``.

The ground truth (network weights, heads, bias direction) depends only on
``cfg.seed``; the sampled rows come from the generator passed in.  This way
:func:`calibrate_beta` and the samplers see the same truth for one config.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import CalibrationError, ParseError, ProtocolError
from .nn import LayerStack, forward, init_stack, norm_1inf

SCENARIOS = ("shared_rep", "no_shared_rep", "overlap_cube", "matched_gaussian")
TRUTH_HIDDEN = (32, 32)
OUTCOME_SCALE_DRAWS = 10_000


@dataclass(frozen=True)
class TreatmentDataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    tau: np.ndarray | None = None  # reference CATE per row, when known

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        t = np.asarray(self.t).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if not (x.shape[0] == t.shape[0] == y.shape[0]):
            raise ValueError(f"row counts differ: x{x.shape}, t{t.shape}, y{y.shape}")
        if not np.all(np.isin(t, (0, 1))):
            raise ValueError("treatment entries must be 0 or 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t.astype(int))
        object.__setattr__(self, "y", y)
        if self.tau is not None:
            tau = np.asarray(self.tau, dtype=float).ravel()
            if tau.shape[0] != x.shape[0]:
                raise ValueError("tau must have one entry per row")
            object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def arm(self, t: int) -> "TreatmentDataset":
        mask = self.t == t
        tau = None if self.tau is None else self.tau[mask]
        return TreatmentDataset(self.x[mask], self.t[mask], self.y[mask], tau)

    def arm_counts(self) -> tuple[int, int]:
        n1 = int(self.t.sum())
        return self.n - n1, n1

    def subset(self, rows) -> "TreatmentDataset":
        tau = None if self.tau is None else self.tau[rows]
        return TreatmentDataset(self.x[rows], self.t[rows], self.y[rows], tau)


@dataclass(frozen=True)
class CombinedData:
    """A large observational sample paired with a small randomized one."""

    obs: TreatmentDataset
    rand: TreatmentDataset
    obs_index: np.ndarray | None = None   # source-row provenance (confound_split)
    rand_index: np.ndarray | None = None

    def __post_init__(self):
        if self.obs.d != self.rand.d:
            raise ValueError("observational and randomized covariate dims differ")


@dataclass(frozen=True)
class SyntheticTruth:
    phi_star: LayerStack          # phi_c; also phi_u unless phi_unc is set
    w_c: np.ndarray               # (2, d_phi), row t = confounded head for arm t
    w_u: np.ndarray               # (2, d_phi)
    noise_sd: float
    delta_unit: np.ndarray        # (2, d_phi), L1 norm 1 per arm
    phi_unc: LayerStack | None = None
    perturbation: np.ndarray | None = None

    @property
    def phi_u(self) -> LayerStack:
        return self.phi_unc if self.phi_unc is not None else self.phi_star

    @property
    def delta(self) -> np.ndarray:
        return self.w_u - self.w_c

    def tau(self, x) -> np.ndarray:
        """True CATE ``phi_u(x) . (w_u[1] - w_u[0])``."""
        return forward(self.phi_u, x) @ (self.w_u[1] - self.w_u[0])

    def mu_conf(self, x, t) -> np.ndarray:
        z = forward(self.phi_star, x)
        return np.einsum("ij,ij->i", np.atleast_2d(z), self.w_c[np.atleast_1d(t)])

    def mu_unc(self, x, t) -> np.ndarray:
        z = forward(self.phi_u, x)
        return np.einsum("ij,ij->i", np.atleast_2d(z), self.w_u[np.atleast_1d(t)])

    def confounding_bias(self, n_draws=10_000, rng=None) -> float:
        """Monte-Carlo estimate of ``E[(phi*(X)(delta_1 - delta_0))^2]``, X ~ N(0, I)."""
        rng = np.random.default_rng(rng)
        x = rng.standard_normal((n_draws, self.phi_star.input_dim))
        g = forward(self.phi_star, x) @ (self.delta[1] - self.delta[0])
        return float(np.mean(g * g))


@dataclass(frozen=True)
class DgpConfig:
    scenario: str = "shared_rep"
    d: int = 10
    d_phi: int = 8
    n_conf: int = 1000
    n_unc: int = 50
    sigma_u: float = 1.0
    beta: float = 0.0
    sigma_eps: float = 0.1
    seed: int = 0
    beta_phi: float = 0.0
    a: float = 3.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.n_conf < 1 or self.n_unc < 1 or self.d < 1 or self.d_phi < 1:
            raise ValueError("sample counts and dims must be >= 1")
        if self.sigma_u <= 0 or self.sigma_eps <= 0:
            raise ValueError("sigma_u and sigma_eps must be positive")
        if self.beta < 0 or self.beta_phi < 0:
            raise ValueError("beta and beta_phi must be nonnegative")
        if self.a <= 0:
            raise ValueError("cube half-width a must be positive")

    def replace(self, **changes) -> "DgpConfig":
        return replace(self, **changes)


def _truth_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0]))


def _data_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1]))


def draw_truth(cfg: DgpConfig) -> SyntheticTruth:
    """Draw the generating representation, heads and bias direction for ``cfg.seed``."""
    rng = _truth_rng(cfg.seed)
    phi = init_stack((cfg.d, *TRUTH_HIDDEN, cfg.d_phi), rng)
    w_c = rng.standard_normal((2, cfg.d_phi))
    # unit outcome scale: rescale the last layer so sd(phi(X) . w_c) ~ 1
    x = rng.standard_normal((OUTCOME_SCALE_DRAWS, cfg.d))
    z = forward(phi, x)
    scale = float(np.std(np.concatenate([z @ w_c[0], z @ w_c[1]])))
    weights = list(phi.weights)
    weights[-1] = weights[-1] / scale
    phi = phi.with_weights(weights)

    magnitude = np.abs(rng.standard_normal(cfg.d_phi))
    magnitude /= magnitude.sum()
    while True:
        signs = rng.choice([-1.0, 1.0], size=(2, cfg.d_phi))
        if cfg.d_phi == 0 or np.any(signs[0] != signs[1]):
            break
    delta_unit = signs * magnitude
    w_u = w_c + cfg.beta * delta_unit

    phi_unc = perturbation = None
    if cfg.scenario == "no_shared_rep":
        perturbation = rng.standard_normal(phi.weights[-1].shape)
        if cfg.beta_phi > 0:
            perturbation *= cfg.beta_phi / norm_1inf(perturbation)
        else:
            perturbation = np.zeros_like(perturbation)
        wu = list(phi.weights)
        wu[-1] = wu[-1] + perturbation
        phi_unc = phi.with_weights(wu)
    return SyntheticTruth(phi, w_c, w_u, cfg.sigma_eps, delta_unit, phi_unc, perturbation)


def _outcomes(phi, heads, x, t, sigma, rng):
    mean = np.einsum("ij,ij->i", forward(phi, x), heads[t])
    return mean + sigma * rng.standard_normal(len(t))


def _sample(cfg: DgpConfig, rng, unc_covariates, rand_rng=None):
    truth = draw_truth(cfg)
    rng = _data_rng(cfg.seed) if rng is None else np.random.default_rng(rng)
    x_c = rng.standard_normal((cfg.n_conf, cfg.d))
    t_c = (rng.random(cfg.n_conf) < 0.5).astype(int)
    y_c = _outcomes(truth.phi_star, truth.w_c, x_c, t_c, cfg.sigma_eps, rng)
    # the randomized rows may come from their own stream (shared across a sweep)
    r = rng if rand_rng is None else np.random.default_rng(rand_rng)
    x_u = unc_covariates(r)
    t_u = (r.random(cfg.n_unc) < 0.5).astype(int)
    y_u = _outcomes(truth.phi_u, truth.w_u, x_u, t_u, cfg.sigma_eps, r)
    data = CombinedData(TreatmentDataset(x_c, t_c, y_c, truth.tau(x_c)),
                        TreatmentDataset(x_u, t_u, y_u, truth.tau(x_u)))
    return data, truth


def sample_shared_rep(cfg: DgpConfig, rng=None, rand_rng=None):
    """Shared representation; ``X_unc ~ N(0, sigma_u^2 I)``."""
    if cfg.scenario not in ("shared_rep", "matched_gaussian"):
        raise ValueError(f"scenario {cfg.scenario!r} is not a Gaussian shared-representation DGP")
    return _sample(cfg, rng, lambda r: cfg.sigma_u * r.standard_normal((cfg.n_unc, cfg.d)),
                   rand_rng)


def sample_no_shared_rep(cfg: DgpConfig, rng=None, rand_rng=None):
    """``phi_u`` differs from ``phi_c`` in its last layer by ``||P||_{1,inf} = beta_phi``.

    The perturbation is available as ``truth.perturbation``.
    """
    if cfg.scenario != "no_shared_rep":
        raise ValueError("sample_no_shared_rep needs scenario='no_shared_rep'")
    return _sample(cfg, rng, lambda r: cfg.sigma_u * r.standard_normal((cfg.n_unc, cfg.d)),
                   rand_rng)


def sample_overlap_cube(cfg: DgpConfig, rng=None, rand_rng=None):
    """Randomized covariates uniform on ``[-a, a]^d`` (overlap violated)."""
    if cfg.scenario != "overlap_cube":
        raise ValueError("sample_overlap_cube needs scenario='overlap_cube'")
    return _sample(cfg, rng, lambda r: r.uniform(-cfg.a, cfg.a, size=(cfg.n_unc, cfg.d)),
                   rand_rng)


def sample(cfg: DgpConfig, rng=None, rand_rng=None):
    """Dispatch on ``cfg.scenario``."""
    if cfg.scenario == "no_shared_rep":
        return sample_no_shared_rep(cfg, rng, rand_rng)
    if cfg.scenario == "overlap_cube":
        return sample_overlap_cube(cfg, rng, rand_rng)
    return sample_shared_rep(cfg, rng, rand_rng)


def matched_sigma_u(a: float, coverage: float = 0.9973) -> float:
    """Gaussian scale putting each coordinate in ``[-a, a]`` with probability ``coverage``."""
    return a / NormalDist().inv_cdf((1.0 + coverage) / 2.0)


def calibrate_beta(cfg: DgpConfig, target_delta: float, rng=None, n_draws=10_000,
                   rel_tol=1e-3, max_steps=60) -> float:
    """Bias norm ``beta`` giving a Monte-Carlo confounding bias of ``target_delta``.

    Bisection on ``beta`` with the bias direction of ``draw_truth(cfg)`` held
    fixed and one common set of Monte-Carlo covariate draws.
    """
    if target_delta < 0:
        raise ValueError("target_delta must be nonnegative")
    if target_delta == 0:
        return 0.0
    unit = draw_truth(cfg.replace(beta=0.0))
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 2])) if rng is None \
        else np.random.default_rng(rng)
    x = rng.standard_normal((n_draws, cfg.d))
    g = forward(unit.phi_star, x) @ (unit.delta_unit[1] - unit.delta_unit[0])
    second_moment = float(np.mean(g * g))
    if second_moment <= 0:
        raise CalibrationError("bias direction is degenerate for this representation")

    def delta_at(beta):
        return beta * beta * second_moment

    lo, hi = 0.0, 1.0
    while delta_at(hi) < target_delta:
        hi *= 2.0
        if hi > 1e12:
            raise CalibrationError("could not bracket the target bias")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        value = delta_at(mid)
        if abs(value - target_delta) <= rel_tol * target_delta:
            return mid
        if value < target_delta:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection did not reach target {target_delta} in {max_steps} steps")


# CSV -----------------------------------------------------------------------

def write_csv(dataset: TreatmentDataset, path) -> None:
    """Header ``x1,...,xd,t,y`` (plus ``tau`` when the dataset carries it)."""
    header = [f"x{j + 1}" for j in range(dataset.d)] + ["t", "y"]
    if dataset.tau is not None:
        header.append("tau")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]] + [str(int(dataset.t[i])),
                                                             repr(float(dataset.y[i]))]
            if dataset.tau is not None:
                row.append(repr(float(dataset.tau[i])))
            w.writerow(row)


def load_csv(path) -> TreatmentDataset:
    """Parse a dataset CSV; raise :class:`ParseError` naming the bad row and column."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                       key=lambda h: int(h[1:]))
        if not xcols:
            raise ParseError(f"{path}: no covariate columns x1..xd")
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if xcols != expected:
            missing = sorted(set(expected) - set(xcols), key=lambda h: int(h[1:]))
            raise ParseError(f"{path}: missing column {missing[0]}")
        for required in ("t", "y"):
            if required not in header:
                raise ParseError(f"{path}: missing column {required!r}")
        idx = {h: k for k, h in enumerate(header)}
        has_tau = "tau" in idx
        xs, ts, ys, taus = [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue

            def cell(col, _row=row, _rownum=rownum):
                try:
                    raw = _row[idx[col]]
                except IndexError:
                    raise ParseError(f"{path}: line {_rownum}, column {col!r}: missing value") from None
                try:
                    return float(raw)
                except ValueError:
                    raise ParseError(
                        f"{path}: line {_rownum}, column {col!r}: non-numeric value {raw!r}") from None

            xs.append([cell(c) for c in xcols])
            tv = cell("t")
            if tv not in (0.0, 1.0):
                raise ParseError(f"{path}: line {rownum}, column 't': treatment {tv:g} not in {{0, 1}}")
            ts.append(int(tv))
            ys.append(cell("y"))
            if has_tau:
                taus.append(cell("tau"))
    if not xs:
        raise ParseError(f"{path}: no data rows")
    return TreatmentDataset(np.array(xs), np.array(ts), np.array(ys),
                            np.array(taus) if has_tau else None)


def write_metadata(path, meta: dict) -> None:
    """Flat ``key=value`` sidecar, one entry per line, keys sorted."""
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


# confounding protocol for real unconfounded data --------------------------

def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def confound_split(data: TreatmentDataset, select_col: int, rand_size: int, c: float,
                   rng=None, skew: float = 2.0) -> CombinedData:
    """Manufacture a small randomized sample and a confounded observational one.

    1. Draw ``rand_size`` rows without replacement, with inclusion weights
       proportional to ``logistic(skew * standardized x[:, select_col])``.
    2. Among the remaining rows keep controls with ``y < mean0 - c*sd0`` and
       treated with ``y > mean1 + c*sd1``; the arm means and sample standard
       deviations are those of the full input dataset.
    """
    rng = np.random.default_rng(rng)
    n0, n1 = data.arm_counts()
    if n0 == 0 or n1 == 0:
        raise ProtocolError("input data must contain both treatment arms")
    if not 1 <= rand_size <= data.n:
        raise ProtocolError(f"rand_size must lie in [1, {data.n}]")
    col = data.x[:, select_col]
    sd = col.std()
    zscore = (col - col.mean()) / sd if sd > 0 else np.zeros_like(col)
    weights = _logistic(skew * zscore)
    rand_rows = np.sort(rng.choice(data.n, size=rand_size, replace=False,
                                   p=weights / weights.sum()))
    rest = np.setdiff1d(np.arange(data.n), rand_rows)

    keep = np.zeros(data.n, dtype=bool)
    for arm, sign in ((0, -1.0), (1, 1.0)):
        ys = data.y[data.t == arm]
        cut = ys.mean() + sign * c * (ys.std(ddof=1) if len(ys) > 1 else 0.0)
        in_arm = data.t == arm
        keep |= in_arm & ((data.y < cut) if arm == 0 else (data.y > cut))
    obs_rows = rest[keep[rest]]
    obs = data.subset(obs_rows)
    for arm in (0, 1):
        if np.sum(obs.t == arm) == 0:
            raise ProtocolError(
                f"observational arm t={arm} is empty after filtering with c={c}; try a smaller c")
    return CombinedData(obs, data.subset(rand_rows), obs_rows, rand_rows)
