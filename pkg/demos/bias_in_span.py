"""
When can the second step remove the bias?
=========================================

The randomized step only adjusts the heads on top of a fixed representation.
It can therefore remove the part of the true bias function that the learned
representation can express.  Observational outcomes only pin down the
directions the confounded heads use, so a representation fitted to them
need not span the bias direction.

Here we compare the step-2 correction on the learned representation with
the same correction on the true generating representation.
"""

import numpy as np

from cornet import DgpConfig, calibrate_beta, sample, sqrt_pehe
from cornet.estimator import CornetModel, Step1Config, Step2Config, fit_cornet, fit_step2
from cornet.nn import LayerStack, forward

cfg = DgpConfig(n_conf=2000, n_unc=200, seed=3)
cfg = cfg.replace(beta=calibrate_beta(cfg, 4.0))
data, truth = sample(cfg)
x_test = np.random.default_rng(0).standard_normal((2000, cfg.d))
tau = truth.tau(x_test)

learned = fit_cornet(data, Step1Config(lambda_d=0.0), Step2Config(lambda_delta=0.0), rng=0)
print(f"learned representation:  sqrt(PEHE) = {sqrt_pehe(learned, x_test, tau):.3f}")


# The true representation, wrapped to accept the constant input feature the
# trained networks use (its weight column is zero).
w = list(truth.phi_star.weights)
w[0] = np.hstack([w[0], np.zeros((w[0].shape[0], 1))])
phi_true = LayerStack((cfg.d + 1, *truth.phi_star.layer_dims[1:]), tuple(w))
delta = fit_step2(phi_true, truth.w_c, data.rand, Step2Config(lambda_delta=0.0))
oracle = CornetModel(phi_true, truth.w_c, delta)
print(f"true representation:     sqrt(PEHE) = {sqrt_pehe(oracle, x_test, tau):.3f}")

# How much of the bias function lies in the span of each representation?
bias = forward(truth.phi_star, x_test) @ (truth.delta[1] - truth.delta[0])
for label, model in (("learned", learned), ("true", oracle)):
    z = model._represent(x_test)
    fit = z @ np.linalg.lstsq(z, bias, rcond=None)[0]
    print(f"{label:8s} span explains {1 - np.var(bias - fit) / np.var(bias):.2f} of the bias variance")
