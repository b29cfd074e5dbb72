"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION <k> PASS|FAIL: ...`` line to the
terminal (even under output capture) and then asserts.  The simulation
sweeps are cached per module, so criterion 11 reuses the criterion 1 run.
"""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cornet.baselines import TwoHeadModel, fit_tau_unc, make_tau_avg, squared_loss, weighted_objective
from cornet.datagen import DgpConfig, calibrate_beta, sample
from cornet.estimator import Step1Config, Step2Config, fit_cornet, fit_step1
from cornet.experiment import load_spec, run_experiment, summary_table
from cornet.lasso import LassoProblem, kkt_residuals, lasso_cd, soft_threshold
from cornet.metrics import h_div_probe
from cornet.nn import backward, forward, init_stack
from cornet.training import TrainConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def verdict(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def table_of(record):
    return summary_table(record.rows)


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def trend(out_root):
    spec = load_spec(CONFIGS / "n_conf_trend.ini", parallelism=1)
    t0 = time.perf_counter()
    record = run_experiment(spec, out_root / "trend_p1")
    return spec, record, time.perf_counter() - t0


def sweep(config, out_root, **overrides):
    spec = load_spec(CONFIGS / config, **overrides)
    return spec, run_experiment(spec, out_root / spec.name)


def test_criterion_1_observational_size_trend(trend, capsys):
    spec, record, seconds = trend
    tab = table_of(record)
    grid = [str(v) for v in dict(spec.sweep)["n_conf"]]
    cornet = [tab[(g, "cornet")][0] for g in grid]
    rises = [b - a for a, b in zip(cornet, cornet[1:]) if b > a]
    monotone = len(rises) == 0 or (len(rises) == 1 and rises[0] <= 0.05)
    conf_last = tab[(grid[-1], "tau_conf")][0]
    unc_last = tab[(grid[-1], "tau_unc")][0]
    checks = {"non-increasing": monotone, "tau_conf in [1.6, 2.4]": 1.6 <= conf_last <= 2.4,
              "cornet < tau_unc at largest n": cornet[-1] < unc_last, "runtime < 15 min": seconds < 900}
    detail = (f"cornet means {['%.3f' % v for v in cornet]}; tau_conf {conf_last:.3f}; "
              f"tau_unc {unc_last:.3f}; {seconds:.0f}s; "
              + ", ".join(f"{k}={'ok' if v else 'no'}" for k, v in checks.items()))
    verdict(capsys, 1, all(checks.values()), detail)


def test_criterion_2_discrepancy(out_root, capsys):
    _, record = sweep("discrepancy.ini", out_root)
    tab = table_of(record)
    c_wide, c_narrow = tab[("1", "cornet")][0], tab[("0.1", "cornet")][0]
    (m1, s1, n1), (m2, s2, n2) = tab[("1", "tau_conf")], tab[("0.1", "tau_conf")]
    pooled_se = math.sqrt(s1 ** 2 / n1 + s2 ** 2 / n2)
    ok_cornet = c_narrow >= c_wide - 0.05
    ok_conf = abs(m1 - m2) < 2 * pooled_se
    verdict(capsys, 2, ok_cornet and ok_conf,
            f"cornet sigma_u=1 {c_wide:.3f}, sigma_u=0.1 {c_narrow:.3f}; "
            f"tau_conf {m1:.3f} vs {m2:.3f}, |diff| {abs(m1 - m2):.4f} vs 2 SE {2 * pooled_se:.4f}")


def test_criterion_3_bias_complexity(out_root, capsys):
    _, record = sweep("bias_complexity.ini", out_root)
    tab = table_of(record)
    base, doubled = tab[("1", "cornet")][0], tab[("2", "cornet")][0]
    verdict(capsys, 3, doubled > base + 0.05,
            f"cornet beta x1 {base:.3f}, beta x2 {doubled:.3f} (need margin > 0.05)")


def test_criterion_4_unconfounded(out_root, capsys):
    spec = load_spec(CONFIGS / "unconfounded.ini", estimators=("cornet", "tau_conf"))
    spec = replace(spec, sweep=(("delta", (0,)),), name="unconfounded_zero")
    tab = table_of(run_experiment(spec, out_root / spec.name))
    c, f = tab[("0", "cornet")][0], tab[("0", "tau_conf")][0]
    tol = max(0.1, 0.2 * f)
    verdict(capsys, 4, abs(c - f) <= tol,
            f"delta=0: cornet {c:.3f}, tau_conf {f:.3f}, |diff| {abs(c - f):.3f} <= {tol:.3f}")


def test_criterion_5_exact_limit_identity(capsys):
    cfg = DgpConfig(n_conf=1000, seed=3)
    data, _ = sample(cfg.replace(beta=calibrate_beta(cfg, 4.0)))
    s1 = fit_step1(data, Step1Config(lambda_d=0.0), rng=0)
    model = fit_cornet(data, Step1Config(lambda_d=0.0), Step2Config(lambda_delta=1e6), step1_result=s1)
    x = np.random.default_rng(1).standard_normal((1000, cfg.d))
    gap = float(np.max(np.abs(model.cate(x) - TwoHeadModel(s1.phi, s1.w_c).cate(x))))
    verdict(capsys, 5, gap == 0.0, f"max |cornet - tau_conf| over 1000 points = {gap!r}")


def test_criterion_6_endpoint_identities(capsys):
    data, _ = sample(DgpConfig(n_conf=500, n_unc=50, seed=4, beta=2.0))
    cfg = TrainConfig(steps=500)
    unc = fit_tau_unc(data.rand, cfg, rng=0)
    s1 = fit_step1(data, Step1Config(lambda_d=0.0, train=cfg), rng=1)
    conf = TwoHeadModel(s1.phi, s1.w_c)
    x = np.random.default_rng(2).standard_normal((1000, 10))
    avg_ok = (np.array_equal(make_tau_avg(unc, conf, 0.0).cate(x), unc.cate(x))
              and np.array_equal(make_tau_avg(unc, conf, 1.0).cate(x), conf.cate(x)))
    worst = 0.0
    for m in (unc, conf):
        worst = max(worst,
                    abs(weighted_objective(m, data, 0.0) / squared_loss(m, data.obs) - 1),
                    abs(weighted_objective(m, data, 1e6) / squared_loss(m, data.rand) - 1))
    verdict(capsys, 6, avg_ok and worst <= 1e-3,
            f"tau_avg endpoints exact={avg_ok}; worst tau_weight relative gap {worst:.2e}")


def test_criterion_7_solver_oracles(capsys):
    rng = np.random.default_rng(7)
    n, p, lam = 40, 6, 0.3
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    z = np.sqrt(n) * q
    y = z @ rng.standard_normal(p) + 0.2 * rng.standard_normal(n)
    closed = np.array([soft_threshold(z[:, j] @ y / n, lam / 2) for j in range(p)])
    ortho_err = float(np.max(np.abs(lasso_cd(LassoProblem(z, y, lam)).coef - closed)))

    z2, y2 = rng.standard_normal((5, 2)), rng.standard_normal(5)
    grid = np.arange(-3.0, 3.0 + 5e-4, 1e-3)
    b0, b1 = np.meshgrid(grid, grid, indexing="ij")
    obj = (np.mean((y2[:, None, None] - z2[:, 0, None, None] * b0 - z2[:, 1, None, None] * b1) ** 2, axis=0)
           + 0.1 * (np.abs(b0) + np.abs(b1)))
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    brute_err = float(np.max(np.abs(lasso_cd(LassoProblem(z2, y2, 0.1)).coef - [grid[i], grid[j]])))

    tol, worst_kkt = 1e-8, 0.0
    for _ in range(50):
        zz = rng.standard_normal((int(rng.integers(5, 60)), int(rng.integers(1, 12))))
        yy = zz @ rng.standard_normal(zz.shape[1]) + 0.3 * rng.standard_normal(len(zz))
        ll = float(rng.uniform(0, 1))
        worst_kkt = max(worst_kkt, float(np.max(kkt_residuals(zz, yy, lasso_cd(LassoProblem(zz, yy, ll), tol).coef, ll))))
    ok = ortho_err <= 1e-6 and brute_err <= 2e-3 and worst_kkt <= 10 * tol
    verdict(capsys, 7, ok, f"orthonormal {ortho_err:.1e}, brute force {brute_err:.1e}, "
                           f"worst KKT residual {worst_kkt:.1e} over 50 problems")


def test_criterion_8_gradients(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        dims = tuple(int(k) for k in rng.integers(1, 9, size=int(rng.integers(2, 5))))
        s = init_stack(dims, rng, "sigmoid" if rng.random() < 0.3 else "identity")
        x, u = rng.standard_normal(dims[0]), rng.standard_normal(dims[-1])
        for k, g in enumerate(backward(s, x, u)):
            for idx in np.ndindex(g.shape):
                w_plus = [m.copy() for m in s.weights]
                w_minus = [m.copy() for m in s.weights]
                w_plus[k][idx] += h
                w_minus[k][idx] -= h
                num = (u @ forward(s.with_weights(w_plus), x) - u @ forward(s.with_weights(w_minus), x)) / (2 * h)
                worst = max(worst, abs(g[idx] - num) / max(1e-6, abs(g[idx]) + abs(num)))
    verdict(capsys, 8, worst < 1e-4, f"max relative error over 100 random nets {worst:.2e}")


def test_criterion_9_probe(capsys):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4000, 3))
    same = h_div_probe(None, x[:2000], x[2000:], rng=0)
    a = rng.standard_normal((500, 3))
    far = h_div_probe(None, a, rng.standard_normal((500, 3)) + [10.0, 0.0, 0.0], rng=1)
    lo, hi = 2.0, 0.0
    for _ in range(500):
        d = int(rng.integers(1, 4))
        xa = rng.standard_normal((int(rng.integers(10, 40)), d))
        xb = rng.standard_normal((int(rng.integers(10, 40)), d)) * rng.uniform(0.1, 3) + rng.uniform(-3, 3)
        v = h_div_probe(None, xa, xb, rng=rng)
        lo, hi = min(lo, v), max(hi, v)
    ok = same < 0.5 and far > 1.5 and 0.0 <= lo and hi <= 2.0
    verdict(capsys, 9, ok, f"identical {same:.3f}, separated {far:.3f}, 500 trials in [{lo:.3f}, {hi:.3f}]")


def test_criterion_10_kallus_ordering(out_root, capsys):
    _, record = sweep("kallus.ini", out_root, estimators=("kallus_nn_cate", "kallus_nn_out", "cornet"))
    tab = table_of(record)
    cate, out, cornet = (tab[("2000", k)][0] for k in ("kallus_nn_cate", "kallus_nn_out", "cornet"))
    ok_out = out < cate
    ok_cornet = cornet <= min(out, cate)
    verdict(capsys, 10, ok_out and ok_cornet,
            f"kallus_nn_out {out:.3f} < kallus_nn_cate {cate:.3f}: {ok_out}; "
            f"cornet {cornet:.3f} <= both: {ok_cornet}")


def test_criterion_11_parallel_determinism(trend, out_root, capsys):
    spec, record, _ = trend
    parallel = run_experiment(replace(spec, parallelism=4), out_root / "trend_p4")
    same = record.raw_path.read_bytes() == parallel.raw_path.read_bytes()
    verdict(capsys, 11, same, f"raw CSV at parallelism 1 and 4 byte-identical: {same} "
                              f"({len(record.rows)} rows)")
