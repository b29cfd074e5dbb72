"""CATE estimation from a large confounded observational sample and a small randomized one.

The main entry points are :func:`fit_cornet` (two-step estimator),
the baselines in :mod:`cornet.baselines`, the synthetic generators in
:mod:`cornet.datagen` and the sweep runner in :mod:`cornet.experiment`.
"""
from .datagen import (CombinedData, DgpConfig, SyntheticTruth, TreatmentDataset, calibrate_beta,
                      confound_split, draw_truth, load_csv, sample, write_csv)
from .estimator import (CornetModel, Step1Config, Step2Config, default_lambda_delta, fit_cornet,
                        fit_step1, fit_step2, predict_cate)
from .lasso import LassoProblem, LassoSolution, lasso_cd, soft_threshold
from .metrics import h_div_probe, min_eig_diagnostic, pehe_hat, sqrt_pehe
from .nn import LayerStack, adam_step, backward, forward, reverse_gradient
from .training import TrainConfig

__version__ = "0.1.0"
