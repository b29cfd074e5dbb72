"""Fit estimators by name and (de)serialize any fitted model.

Within one call of :func:`fit_named` the unbalanced observational fit is
computed once and shared by ``tau_conf``, ``cornet``, ``tau_avg`` and the
network-based Kallus variants, so they differ only in what they do with it.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, estimator
from .datagen import CombinedData
from .estimator import CornetModel, Step1Config, Step2Config
from .training import TrainConfig

ESTIMATORS = ("tau_unc", "tau_conf", "tau_avg", "tau_weight", "kallus_ridge_cate",
              "kallus_nn_cate", "kallus_ridge_out", "kallus_nn_out", "cornet", "cornet_plus")


@dataclass(frozen=True)
class EstimatorOptions:
    train: TrainConfig = field(default_factory=TrainConfig)
    tau_avg_lambda: float = 0.5
    tau_weight_Lambda: float | None = None   # None -> n_conf / n_unc
    kallus_propensity: str = "known"
    kallus_e: float = 0.5
    mixup_alpha: float = 0.2
    plus_lambda_d: float | None = None        # cornet_plus; None -> closed-form rule
    plus_lambda_delta: float | None = None


def check_names(names) -> tuple[str, ...]:
    names = tuple(names)
    unknown = [n for n in names if n not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimator(s) {', '.join(unknown)}; known: {', '.join(ESTIMATORS)}")
    return names


def label_stream(entropy, label: str) -> np.random.Generator:
    """Independent generator for ``label`` under a fixed entropy prefix."""
    return np.random.default_rng(np.random.SeedSequence([*entropy, zlib.crc32(label.encode())]))


class _Fits:
    """Lazy shared sub-fits for one dataset."""

    def __init__(self, data: CombinedData, opts: EstimatorOptions, stream):
        self.data, self.opts, self.stream = data, opts, stream
        self._cache = {}

    def get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def step1(self):
        cfg = Step1Config(lambda_d=0.0, train=self.opts.train)
        return self.get("step1", lambda: estimator.fit_step1(self.data, cfg, self.stream("step1")))

    def conf(self):
        s1 = self.step1()
        return baselines.TwoHeadModel(s1.phi, s1.w_c)

    def unc(self):
        return self.get("unc", lambda: baselines.fit_tau_unc(self.data.rand, self.opts.train,
                                                             self.stream("tau_unc")))


def fit_named(name: str, data: CombinedData, opts: EstimatorOptions = EstimatorOptions(),
              stream=None, shared: _Fits | None = None):
    """Fit estimator ``name``.  ``stream(label)`` supplies generators per sub-fit."""
    check_names([name])
    if stream is None:
        stream = lambda label: label_stream((0,), label)  # noqa: E731
    fits = shared or _Fits(data, opts, stream)
    o = opts
    if name == "tau_unc":
        return fits.unc()
    if name == "tau_conf":
        return fits.conf()
    if name == "tau_avg":
        return baselines.make_tau_avg(fits.unc(), fits.conf(), o.tau_avg_lambda)
    if name == "tau_weight":
        lam = o.tau_weight_Lambda
        if lam is None:
            lam = data.obs.n / data.rand.n
        return baselines.fit_tau_weight(data, lam, o.train, stream("tau_weight"))[0]
    if name.startswith("kallus_"):
        _, base, target = name.split("_")
        target = "outcome" if target == "out" else "cate"
        f = fits.conf() if base == "nn" else fits.get("ridge", lambda: baselines.fit_ridge_outcome(data.obs))
        return baselines.fit_kallus(data, base, target, o.kallus_propensity, o.kallus_e, o.train, f=f)
    if name == "cornet":
        return estimator.fit_cornet(data, Step1Config(lambda_d=0.0, train=o.train),
                                    Step2Config(lambda_delta=0.0), step1_result=fits.step1())
    # cornet_plus: closed-form lambda_delta, lambda_d coupled to it
    step1 = Step1Config(lambda_d=o.plus_lambda_d, mixup_alpha=o.mixup_alpha, train=o.train)
    return estimator.fit_cornet(data, step1, Step2Config(lambda_delta=o.plus_lambda_delta),
                                rng=stream("cornet_plus"))


def fit_many(names, data: CombinedData, opts: EstimatorOptions = EstimatorOptions(), stream=None):
    """Fit several estimators sharing sub-fits; returns ``{name: model or exception}``."""
    if stream is None:
        stream = lambda label: label_stream((0,), label)  # noqa: E731
    fits = _Fits(data, opts, stream)
    out = {}
    for name in check_names(names):
        try:
            out[name] = fit_named(name, data, opts, stream, fits)
        except Exception as exc:  # recorded per estimator, never fatal
            out[name] = exc
    return out


def save_any(model, path, name: str | None = None) -> None:
    doc = (estimator.model_to_dict(model) if isinstance(model, CornetModel)
           else baselines.model_to_dict(model))
    if name:
        doc["estimator"] = name
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_any(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") == "cornet":
        return estimator.model_from_dict(doc)
    return baselines.model_from_dict(doc)
