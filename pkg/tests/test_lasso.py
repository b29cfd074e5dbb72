import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cornet.errors import NumericError
from cornet.lasso import LassoProblem, kkt_residuals, lasso_cd, lasso_objective, soft_threshold


def random_problem(rng, n=30, p=5, lam=0.1):
    z = rng.standard_normal((n, p))
    y = z @ rng.standard_normal(p) + 0.3 * rng.standard_normal(n)
    return LassoProblem(z, y, lam)


@pytest.mark.parametrize("v,lam,out", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 1.0, -2.0)])
def test_soft_threshold_examples(v, lam, out):
    assert soft_threshold(v, lam) == out


def test_soft_threshold_rejects_negative_lambda():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_large_lambda_gives_zero():
    rng = np.random.default_rng(0)
    prob = random_problem(rng)
    lam = 2 * np.max(np.abs(prob.z.T @ prob.y)) / len(prob.y)
    sol = lasso_cd(LassoProblem(prob.z, prob.y, lam))
    assert np.all(sol.coef == 0)


def test_orthonormal_design_matches_closed_form():
    # Z'Z/n = I, so each coordinate is a soft-thresholded correlation at lam/2
    rng = np.random.default_rng(1)
    n, p, lam = 40, 6, 0.3
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    z = np.sqrt(n) * q
    y = z @ np.array([1.0, -0.5, 0.1, 0.0, 2.0, -0.05]) + 0.2 * rng.standard_normal(n)
    expected = np.array([soft_threshold(z[:, j] @ y / n, lam / 2) for j in range(p)])
    sol = lasso_cd(LassoProblem(z, y, lam))
    np.testing.assert_allclose(sol.coef, expected, atol=1e-6)
    assert np.any(expected == 0) and np.any(expected != 0)


def test_two_dimensional_brute_force():
    rng = np.random.default_rng(2)
    z, y, lam = rng.standard_normal((5, 2)), rng.standard_normal(5), 0.1
    grid = np.arange(-3.0, 3.0 + 5e-4, 1e-3)
    b0, b1 = np.meshgrid(grid, grid, indexing="ij")
    resid = y[:, None, None] - z[:, 0, None, None] * b0 - z[:, 1, None, None] * b1
    obj = np.mean(resid ** 2, axis=0) + lam * (np.abs(b0) + np.abs(b1))
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    coef = lasso_cd(LassoProblem(z, y, lam)).coef
    assert abs(coef[0] - grid[i]) < 2e-3 and abs(coef[1] - grid[j]) < 2e-3


def test_kkt_on_random_problems():
    rng = np.random.default_rng(3)
    tol = 1e-8
    for _ in range(50):
        n, p = rng.integers(5, 60), rng.integers(1, 12)
        lam = float(rng.uniform(0.0, 1.0))
        prob = random_problem(rng, n, p, lam)
        sol = lasso_cd(prob, tol=tol)
        assert sol.converged
        assert np.all(kkt_residuals(prob.z, prob.y, sol.coef, lam) <= 10 * tol)


def test_zero_lambda_matches_least_squares():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, 50, 6, 0.0)
    ls = np.linalg.solve(prob.z.T @ prob.z, prob.z.T @ prob.y)
    np.testing.assert_allclose(lasso_cd(prob).coef, ls, atol=1e-6)


def test_objective_non_increasing_and_reported_exactly():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((30, 8))
    z[:, 1] = z[:, 0] + 0.01 * rng.standard_normal(30)  # correlated columns need many sweeps
    prob = LassoProblem(z, rng.standard_normal(30), 0.05)
    sol = lasso_cd(prob)
    assert sol.iterations > 2
    assert np.all(np.diff(sol.history) <= 1e-12)
    assert sol.final_objective == lasso_objective(prob.z, prob.y, sol.coef, prob.lam)


def test_zero_column_stays_zero():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((20, 3))
    z[:, 1] = 0.0
    sol = lasso_cd(LassoProblem(z, rng.standard_normal(20), 0.0))
    assert sol.coef[1] == 0.0 and sol.converged


def test_invalid_problems():
    with pytest.raises(NumericError):
        LassoProblem(np.array([[np.nan]]), np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        LassoProblem(np.ones((3, 2)), np.ones(4), 0.1)
    with pytest.raises(ValueError):
        LassoProblem(np.ones((3, 2)), np.ones(3), -1.0)
    with pytest.raises(ValueError):
        lasso_cd(LassoProblem(np.ones((3, 2)), np.ones(3), 0.1), tol=0.0)


def test_max_sweeps_reports_non_convergence():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((30, 4))
    z[:, 1] = z[:, 0] + 1e-3 * rng.standard_normal(30)
    sol = lasso_cd(LassoProblem(z, rng.standard_normal(30), 0.0), max_sweeps=1)
    assert sol.iterations == 1 and not sol.converged


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 10.0), st.floats(0.0, 0.5))
def test_scaling_equivariance(seed, s, lam):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 25, 4, lam)
    base = lasso_cd(prob, tol=1e-12).coef
    scaled = lasso_cd(LassoProblem(prob.z, s * prob.y, s * lam), tol=1e-12).coef
    np.testing.assert_allclose(scaled, s * base, rtol=1e-6, atol=1e-8 * s)
