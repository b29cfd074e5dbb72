import numpy as np
import pytest

from cornet.datagen import TreatmentDataset
from cornet.errors import InputShapeError, ProbeError
from cornet.metrics import (DiagnosticsRecord, PeheReport, ProbeConfig, arm_covariance, diagnostics,
                            error_sum, h_div_probe, h_divergence_from_error, jacobi_eigenvalues,
                            min_eig_diagnostic, pehe_hat, sqrt_pehe)
from cornet.nn import LayerStack, init_stack


def test_pehe_examples():
    tau = np.array([0.5, -1.0, 2.0])
    x = np.zeros((3, 2))
    assert pehe_hat(lambda _: tau, x, tau) == 0.0
    assert sqrt_pehe(lambda _: tau + 2, x, tau) == 2.0
    assert pehe_hat(lambda _: tau + np.array([1.0, -1.0, 2.0]), x, tau) == 2.0


def test_pehe_permutation_invariant_and_length_checked():
    rng = np.random.default_rng(0)
    pred, tau = rng.standard_normal(50), rng.standard_normal(50)
    perm = rng.permutation(50)
    x = np.zeros((50, 1))
    assert pehe_hat(lambda _: pred, x, tau) == pytest.approx(pehe_hat(lambda _: pred[perm], x, tau[perm]))
    with pytest.raises(InputShapeError):
        pehe_hat(lambda _: pred[:3], x, tau)


def test_pehe_report_sd():
    r = PeheReport.from_values("cornet", [1.0, 2.0, 3.0], {"n_conf": 250})
    assert (r.sqrt_pehe_mean, r.sqrt_pehe_sd, r.n_reps) == (2.0, 1.0, 3)
    assert PeheReport.from_values("cornet", [1.5]).sqrt_pehe_sd == 0.0


def test_error_sum_hand_case():
    # threshold classifier at 0 on N(-3, 0.1) vs N(3, 0.1): error sum 0, divergence 2
    rng = np.random.default_rng(1)
    a, b = rng.normal(-3, 0.1, 1000), rng.normal(3, 0.1, 1000)
    assert h_divergence_from_error(error_sum(a, b, threshold=0.0)) == 2.0
    assert h_divergence_from_error(1.7) == 0.0


def test_probe_identical_distributions():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4000, 3))
    assert h_div_probe(None, x[:2000], x[2000:], rng=0) < 0.5


def test_probe_separated_clusters():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((500, 3))
    b = rng.standard_normal((500, 3)) + np.array([10.0, 0.0, 0.0])
    assert h_div_probe(None, a, b, rng=0) > 1.5


def test_probe_always_in_range():
    rng = np.random.default_rng(4)
    cfg = ProbeConfig(epochs=50)
    for _ in range(500):
        d = int(rng.integers(1, 4))
        a = rng.standard_normal((int(rng.integers(10, 40)), d))
        b = rng.standard_normal((int(rng.integers(10, 40)), d)) * rng.uniform(0.1, 3) + rng.uniform(-3, 3)
        v = h_div_probe(None, a, b, cfg, rng)
        assert 0.0 <= v <= 2.0


def test_probe_accepts_representation_and_rejects_small_samples():
    rng = np.random.default_rng(5)
    phi = init_stack((4, 6, 2), rng)
    a, b = rng.standard_normal((50, 3)), rng.standard_normal((50, 3)) + 5
    assert 0.0 <= h_div_probe(phi, a, b, rng=0) <= 2.0
    with pytest.raises(ProbeError):
        h_div_probe(None, a[:5], b)


def test_jacobi_examples():
    np.testing.assert_allclose(jacobi_eigenvalues([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0], atol=1e-12)
    with pytest.raises(InputShapeError):
        jacobi_eigenvalues([[1.0, 2.0], [0.0, 1.0]])


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(6)
    for n in (1, 3, 8, 20):
        a = rng.standard_normal((n, n))
        a = a + a.T
        np.testing.assert_allclose(jacobi_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-9)


def identity_phi(d):
    return LayerStack((d, d), (np.eye(d),))


def test_min_eig_rank_deficient():
    rng = np.random.default_rng(7)
    rand = TreatmentDataset(rng.standard_normal((10, 6)), np.array([1] * 4 + [0] * 6), np.zeros(10))
    assert abs(min_eig_diagnostic(identity_phi(6), rand, 1)) <= 1e-10


def test_min_eig_identity_covariance():
    rng = np.random.default_rng(8)
    q, _ = np.linalg.qr(rng.standard_normal((30, 4)))
    z = np.sqrt(30) * q
    rand = TreatmentDataset(z, np.ones(30, dtype=int), np.zeros(30))
    assert min_eig_diagnostic(identity_phi(4), rand, 1) == pytest.approx(1.0, abs=1e-10)


def test_min_eig_duplicate_rows_only_rescale():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((20, 3))
    t = np.arange(20) % 2
    base = min_eig_diagnostic(identity_phi(3), TreatmentDataset(x, t, np.zeros(20)), 1)
    doubled = TreatmentDataset(np.vstack([x, x]), np.concatenate([t, t]), np.zeros(40))
    assert min_eig_diagnostic(identity_phi(3), doubled, 1) == pytest.approx(base, rel=1e-10)
    extra = TreatmentDataset(np.vstack([x, x[t == 0]]), np.concatenate([t, t[t == 0]]), np.zeros(30))
    assert min_eig_diagnostic(identity_phi(3), extra, 1) == pytest.approx(base * 20 / 30, rel=1e-10)


def test_arm_covariance_empty_arm():
    with pytest.raises(ValueError):
        arm_covariance(np.ones((3, 2)), np.zeros(3), 1)


def test_diagnostics_record():
    rng = np.random.default_rng(10)
    phi = init_stack((4, 8, 3), rng)
    rand = TreatmentDataset(rng.standard_normal((40, 3)), np.arange(40) % 2, np.zeros(40))
    rec = diagnostics(phi, rng.standard_normal((200, 3)), rand, rng=0)
    assert 0.0 <= rec.h_div <= 2.0
    assert all(v > 0 for v in rec.min_eig_by_arm)
    assert rec.max_weight_norm == phi.max_norm_1inf()
    with pytest.raises(ValueError):
        DiagnosticsRecord(2.5, (0.0, 0.0), 1.0)
