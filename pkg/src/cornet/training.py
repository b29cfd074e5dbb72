"""Gradient training of a representation with two linear outcome heads.

Shared by CorNet step 1 and the network baselines.  The model predicts
``phi([x, 1]) . heads[t]``; the constant input feature stands in for bias
vectors, which the networks do not have.

Optionally the representation is balanced against a second covariate
sample: an adversary classifies interpolated (mixup) representations
against observational ones and the representation receives its reversed
gradient, scaled by ``lambda_d``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AugmentationError, FitError, NumericError
from .nn import (Adam, LayerStack, _backprop, _forward_cache, add_intercept, init_stack,
                 reverse_gradient)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """Optimization controls.

    ``epochs=None`` picks enough epochs for roughly ``steps`` parameter
    updates.  ``batch=None`` means full batch up to ``full_batch_max`` rows
    and minibatches of 256 beyond that.

    With ``val_fraction > 0`` a stratified share of the rows is held out and
    the weights with the lowest held-out loss are returned; training stops
    once that loss has not improved for ``patience`` parameter updates.
    """

    hidden: tuple[int, ...] = (32, 32)
    d_phi: int = 8
    learning_rate: float = 1e-3
    epochs: int | None = None
    steps: int = 3000
    batch: int | None = None
    full_batch_max: int = 2048
    minibatch: int = 256
    log_points: int = 20
    val_fraction: float = 0.2
    patience: int = 200

    def batch_size(self, n: int) -> int:
        if self.batch is not None:
            return max(1, min(self.batch, n))
        return n if n <= self.full_batch_max else self.minibatch

    def n_epochs(self, n: int) -> int:
        if self.epochs is not None:
            return self.epochs
        per_epoch = math.ceil(n / self.batch_size(n))
        return max(1, math.ceil(self.steps / per_epoch))


@dataclass(frozen=True)
class Balancing:
    """Adversarial balancing against randomized covariates."""

    x_unc: np.ndarray
    lambda_d: float
    mixup_alpha: float = 0.2
    m: int | None = None
    adversary_hidden: tuple[int, ...] = (16,)


@dataclass
class TrainResult:
    phi: LayerStack
    heads: np.ndarray          # (2, d_phi); row t is the head of arm t
    adversary: LayerStack | None
    log: list = field(default_factory=list)
    best_epoch: int | None = None   # epoch of the returned weights under early stopping


def mixup_augment(x_unc, x_conf, alpha: float, m: int, rng, mu=None) -> np.ndarray:
    """Interpolate ``mu * x_unc[j] + (1 - mu) * x_conf[i]`` for ``m`` rows.

    ``i`` cycles through the observational rows, ``j`` is uniform over the
    randomized rows and ``mu ~ Beta(alpha, alpha)`` per row.  Passing ``mu``
    (scalar or length-``m`` array) overrides the Beta draws.
    """
    x_unc = np.atleast_2d(np.asarray(x_unc, dtype=float))
    x_conf = np.atleast_2d(np.asarray(x_conf, dtype=float))
    if x_unc.size == 0 or x_conf.size == 0:
        raise AugmentationError("mixup needs nonempty randomized and observational samples")
    if x_unc.shape[1] != x_conf.shape[1]:
        raise AugmentationError("covariate dimensions differ")
    if alpha <= 0 or m < 1:
        raise AugmentationError("need alpha > 0 and m >= 1")
    rng = np.random.default_rng(rng)
    i = np.arange(m) % x_conf.shape[0]
    j = rng.integers(0, x_unc.shape[0], size=m)
    if mu is None:
        mu = rng.beta(alpha, alpha, size=m)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (m,))[:, None]
    return mu * x_unc[j] + (1.0 - mu) * x_conf[i]


def represent(phi: LayerStack, x) -> np.ndarray:
    """Apply a trained representation to raw covariates (adds the constant feature)."""
    _, z = _forward_cache(phi.weights, phi.output_activation, np.atleast_2d(add_intercept(x)))
    return z


def _check_arms(t, min_per_arm, what):
    for arm in (0, 1):
        k = int(np.sum(t == arm))
        if k < min_per_arm:
            raise FitError(f"{what}: arm t={arm} has {k} samples, need at least {min_per_arm}")


def validation_split(t, fraction: float, rng):
    """Stratified holdout: returns ``(train_idx, val_idx)``.

    Each arm keeps at least two training rows; an arm that is too small
    contributes nothing to the holdout.
    """
    t = np.asarray(t).astype(int).ravel()
    if fraction <= 0:
        return np.arange(len(t)), np.arange(0)
    train, val = [], []
    for arm in (0, 1):
        rows = np.flatnonzero(t == arm)
        rows = rows[rng.permutation(len(rows))]
        k = min(int(round(fraction * len(rows))), max(len(rows) - 2, 0))
        val.append(rows[:k])
        train.append(rows[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def train_two_head(x, t, y, cfg: TrainConfig, rng, sample_weight=None,
                   balancing: Balancing | None = None, min_per_arm: int = 2,
                   what: str = "training data") -> TrainResult:
    """Minimize ``sum_i w_i (phi(x_i).heads[t_i] - y_i)^2 / sum_i w_i``.

    With ``balancing`` and ``lambda_d > 0`` the representation additionally
    maximizes the adversary's cross-entropy (gradient reversal).  Each step
    updates the adversary once on the same minibatch.  Early stopping looks
    at the held-out squared loss only.
    """
    rng = np.random.default_rng(rng)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t).astype(int).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n_all, d = x.shape
    if len(t) != n_all or len(y) != n_all:
        raise FitError(f"{what}: x, t and y have different row counts")
    _check_arms(t, min_per_arm, what)
    w_all = np.ones(n_all) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w_all.sum() <= 0:
        raise FitError("sample weights sum to zero")

    phi = init_stack((d + 1, *cfg.hidden, cfg.d_phi), rng)
    phi_w = [wk.copy() for wk in phi.weights]
    bound = 1.0 / math.sqrt(cfg.d_phi)
    heads = rng.uniform(-bound, bound, size=(2, cfg.d_phi))
    opt = Adam(phi_w + [heads], cfg.learning_rate)

    tr, va = validation_split(t, cfg.val_fraction, rng)
    xa_all = add_intercept(x)
    xa, t_tr, y_tr, w = xa_all[tr], t[tr], y[tr], w_all[tr]
    x_va, t_va, y_va, w_va = xa_all[va], t[va], y[va], w_all[va]
    early = len(va) > 0 and w_va.sum() > 0
    n = len(tr)
    total_weight = float(w.sum())

    adversarial = balancing is not None and balancing.lambda_d > 0
    adv_w = None
    if adversarial:
        m = balancing.m or n
        adv = init_stack((cfg.d_phi, *balancing.adversary_hidden, 1), rng, "sigmoid")
        adv_w = [wk.copy() for wk in adv.weights]
        adv_opt = Adam(adv_w, cfg.learning_rate)
        lam_d = float(balancing.lambda_d)
        x_conf = x[tr]

    bsz = cfg.batch_size(n)
    per_epoch = math.ceil(n / bsz)
    epochs = cfg.n_epochs(n)
    log_every = max(1, epochs // max(1, cfg.log_points))
    history = []
    best = (math.inf, None, None, -1)
    since_best = 0
    for epoch in range(epochs):
        if adversarial:
            pool = add_intercept(mixup_augment(balancing.x_unc, x_conf, balancing.mixup_alpha, m, rng))
            pool_perm = rng.permutation(m)
        perm = rng.permutation(n) if bsz < n else np.arange(n)
        adv_stats = []
        for start in range(0, n, bsz):
            idx = perm[start:start + bsz]
            xb, tb, yb, wb = xa[idx], t_tr[idx], y_tr[idx], w[idx]
            inputs, z = _forward_cache(phi_w, "identity", xb)
            hb = heads[tb]
            resid = np.einsum("ij,ij->i", z, hb) - yb
            scale = len(idx) / n * total_weight if bsz < n else total_weight
            batch_loss = float(np.sum(wb * resid * resid) / scale)
            if not np.isfinite(batch_loss) or batch_loss > DIVERGENCE_LIMIT:
                raise NumericError(f"training diverged at epoch {epoch} (loss {batch_loss:.3g})")
            g = 2.0 * wb * resid / scale
            g_heads = np.zeros_like(heads)
            _arm_sum(g_heads, g[:, None] * z, tb)
            dz = g[:, None] * hb

            if adversarial:
                k = len(idx)
                pidx = pool_perm[(start + np.arange(k)) % m]
                int_inputs, z_int = _forward_cache(phi_w, "identity", pool[pidx])
                a_inputs, p = _forward_cache(adv_w, "sigmoid", np.vstack([z, z_int]))
                p = p[:, 0]
                labels = np.concatenate([np.zeros(k), np.ones(k)])
                # class-balanced cross-entropy; gradient w.r.t. pre-activation is (p - label)/k
                adv_grads, g_in = _backprop(adv_w, a_inputs, ((p - labels) / k)[:, None])
                g_rev = reverse_gradient(g_in, lam_d)
                dz = dz + g_rev[:k]
                phi_grads_int, _ = _backprop(phi_w, int_inputs, g_rev[k:])
                adv_opt.step(adv_grads)
                eps = 1e-12
                bce = -(np.mean(np.log(1.0 - p[:k] + eps)) + np.mean(np.log(p[k:] + eps)))
                soft_err = np.mean(p[:k]) + np.mean(1.0 - p[k:])
                adv_stats.append((bce, 2.0 * (1.0 - min(soft_err, 1.0))))

            phi_grads, _ = _backprop(phi_w, inputs, dz)
            if adversarial:
                phi_grads = [a + b for a, b in zip(phi_grads, phi_grads_int)]
            opt.step(phi_grads + [g_heads])

        val_loss = None
        if early:
            _, z_va = _forward_cache(phi_w, "identity", x_va)
            r = np.einsum("ij,ij->i", z_va, heads[t_va]) - y_va
            val_loss = float(np.sum(w_va * r * r) / w_va.sum())
            if val_loss < best[0]:
                best = (val_loss, [wk.copy() for wk in phi_w], heads.copy(), epoch)
                since_best = 0
            else:
                since_best += per_epoch
        stop = early and since_best >= cfg.patience
        if epoch % log_every == 0 or epoch == epochs - 1 or stop:
            _, z_all = _forward_cache(phi_w, "identity", xa)
            r = np.einsum("ij,ij->i", z_all, heads[t_tr]) - y_tr
            mse = float(np.sum(w * r * r) / total_weight)
            if not np.isfinite(mse) or mse > DIVERGENCE_LIMIT:
                raise NumericError(f"training diverged at epoch {epoch} (loss {mse:.3g})")
            entry = {"epoch": epoch, "loss": mse}
            if val_loss is not None:
                entry["val_loss"] = val_loss
            if adversarial:
                bce, h_soft = np.mean(adv_stats, axis=0)
                entry.update(adv_bce=float(bce), h_div_soft=float(h_soft),
                             objective=mse + lam_d * float(h_soft))
            else:
                entry["objective"] = mse
            history.append(entry)
        if stop:
            break

    if early and best[1] is not None:
        phi_w, heads = best[1], best[2]
    phi_final = phi.with_weights(phi_w)
    adversary = adv.with_weights(adv_w) if adversarial else None
    return TrainResult(phi_final, heads.copy(), adversary, history,
                       best[3] if early and best[1] is not None else None)


def _arm_sum(out, rows, arms):
    out[0] = rows[arms == 0].sum(axis=0)
    out[1] = rows[arms == 1].sum(axis=0)
