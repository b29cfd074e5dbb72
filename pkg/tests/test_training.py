import numpy as np
import pytest

from cornet.datagen import DgpConfig, sample
from cornet.errors import AugmentationError, FitError
from cornet.training import (Balancing, TrainConfig, mixup_augment, represent, train_two_head,
                             validation_split)

FAST = TrainConfig(hidden=(8,), d_phi=4, steps=300)


def linear_problem(seed=0, n=200, d=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    t = np.arange(n) % 2
    coef = rng.standard_normal((2, d + 1))
    xa = np.hstack([x, np.ones((n, 1))])
    y = np.einsum("ij,ij->i", xa, coef[t]) + 0.1 * rng.standard_normal(n)
    return x, t, y, xa


def test_linear_representation_recovers_least_squares():
    x, t, y, xa = linear_problem()
    cfg = TrainConfig(hidden=(), d_phi=4, learning_rate=1e-3, steps=30000, val_fraction=0.0)
    res = train_two_head(x, t, y, cfg, rng=0)
    w = res.phi.weights[0]   # (d_phi, d + 1)
    for arm in (0, 1):
        rows = t == arm
        ls = np.linalg.lstsq(xa[rows], y[rows], rcond=None)[0]
        np.testing.assert_allclose(w.T @ res.heads[arm], ls, atol=1e-3)


def test_objective_is_plain_loss_without_balancing():
    x, t, y, _ = linear_problem(1)
    res = train_two_head(x, t, y, FAST, rng=1)
    assert res.adversary is None
    assert all(e["objective"] == e["loss"] for e in res.log)


def test_log_finite_on_default_dgp():
    data, _ = sample(DgpConfig(n_conf=500, seed=2))
    res = train_two_head(data.obs.x, data.obs.t, data.obs.y, TrainConfig(steps=400), rng=2)
    assert all(np.isfinite(e["objective"]) for e in res.log)
    assert res.log[-1]["loss"] < res.log[0]["loss"]


def test_balancing_logs_adversary():
    data, _ = sample(DgpConfig(n_conf=300, n_unc=40, seed=3, sigma_u=0.3))
    bal = Balancing(data.rand.x, lambda_d=0.5)
    res = train_two_head(data.obs.x, data.obs.t, data.obs.y, FAST, rng=3, balancing=bal)
    assert res.adversary is not None
    for e in res.log:
        assert 0.0 <= e["h_div_soft"] <= 2.0
        assert e["objective"] == pytest.approx(e["loss"] + 0.5 * e["h_div_soft"])


def test_deterministic_given_seed():
    x, t, y, _ = linear_problem(4)
    a = train_two_head(x, t, y, FAST, rng=7)
    b = train_two_head(x, t, y, FAST, rng=7)
    assert np.array_equal(a.heads, b.heads)
    assert all(np.array_equal(p, q) for p, q in zip(a.phi.weights, b.phi.weights))


def test_missing_arm_is_a_fit_error():
    x, _, y, _ = linear_problem(5, n=10)
    with pytest.raises(FitError, match="t=1"):
        train_two_head(x, np.array([0] * 9 + [1]), y, FAST, rng=0)


def test_validation_split_is_stratified():
    t = np.array([0] * 50 + [1] * 3)
    tr, va = validation_split(t, 0.2, np.random.default_rng(0))
    assert sorted(np.concatenate([tr, va])) == list(range(53))
    assert np.sum(t[va] == 0) == 10
    assert np.sum(t[tr] == 1) >= 2


def test_early_stopping_returns_best_epoch():
    x, t, y, _ = linear_problem(6, n=60)
    res = train_two_head(x, t, y, TrainConfig(hidden=(32, 32), d_phi=8, steps=3000, patience=50), rng=0)
    assert res.best_epoch is not None
    assert res.log[-1]["epoch"] < 2999


def test_represent_adds_constant_feature():
    x, t, y, _ = linear_problem(7)
    res = train_two_head(x, t, y, FAST, rng=0)
    z = represent(res.phi, x[:5])
    assert z.shape == (5, 4)


def test_mixup_endpoints():
    rng = np.random.default_rng(0)
    xu, xc = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
    np.testing.assert_array_equal(mixup_augment(xu, xc, 0.2, 7, 1, mu=0.0), xc)
    out = mixup_augment(xu, xc, 0.2, 20, 1, mu=1.0)
    assert all(any(np.array_equal(row, u) for u in xu) for row in out)


def test_mixup_beta_one_mean():
    # with x_unc = 1 and x_conf = 0 every output is mu itself
    out = mixup_augment(np.ones((1, 1)), np.zeros((1, 1)), 1.0, 100_000, 0)
    assert abs(out.mean() - 0.5) < 0.01


def test_mixup_errors():
    with pytest.raises(AugmentationError):
        mixup_augment(np.zeros((0, 2)), np.ones((3, 2)), 0.2, 3, 0)
    with pytest.raises(AugmentationError):
        mixup_augment(np.ones((2, 2)), np.ones((3, 3)), 0.2, 3, 0)
    with pytest.raises(AugmentationError):
        mixup_augment(np.ones((2, 2)), np.ones((3, 2)), 0.0, 3, 0)
