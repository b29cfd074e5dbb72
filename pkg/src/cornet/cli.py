"""Command-line entry point: ``python -m cornet <command> ...``.

Commands: simulate, fit, eval, experiment, report.  Exit status is 0 on
success, 2 for bad input or configuration, 3 when every experiment cell
failed and 1 for other runtime failures.  Failures print one line to stderr.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .datagen import (CombinedData, DgpConfig, TreatmentDataset, calibrate_beta, load_csv,
                      sample, write_csv, write_metadata)
from .errors import ConfigError, CornetError, ParseError
from .experiment import load_spec, report, run_experiment
from .metrics import sqrt_pehe
from .registry import ESTIMATORS, EstimatorOptions, check_names, fit_named, label_stream, load_any, save_any
from .training import TrainConfig

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 1, 2, 3


def _dgp_from_file(path, seed=None):
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_section("dgp"):
        raise ConfigError(f"{path}: missing [dgp] section")
    kw, delta = {}, None
    fields = DgpConfig.__dataclass_fields__
    try:
        for key, raw in cp["dgp"].items():
            if key == "delta":
                delta = float(raw)
            elif key == "scenario":
                kw[key] = raw.strip()
            elif key in fields:
                kw[key] = type(fields[key].default)(float(raw))
            else:
                raise ConfigError(f"unknown [dgp] key {key!r}")
        if seed is not None:
            kw["seed"] = seed
        cfg = DgpConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if delta is not None:
        cfg = cfg.replace(beta=calibrate_beta(cfg, delta))
    return cfg, delta


def cmd_simulate(args) -> int:
    cfg, delta = _dgp_from_file(args.config, args.seed)
    data, truth = sample(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data.obs, out / "obs.csv")
    write_csv(data.rand, out / "rand.csv")
    x_test = np.random.default_rng([cfg.seed, 3]).standard_normal((args.test_size, cfg.d))
    write_csv(TreatmentDataset(x_test, np.zeros(args.test_size, dtype=int), np.zeros(args.test_size),
                               truth.tau(x_test)), out / "test.csv")
    meta = {"seed": cfg.seed, "scenario": cfg.scenario, "beta": repr(cfg.beta),
            "sigma_u": repr(cfg.sigma_u), "sigma_eps": repr(cfg.sigma_eps),
            "n_conf": cfg.n_conf, "n_unc": cfg.n_unc, "d": cfg.d, "d_phi": cfg.d_phi,
            "beta_phi": repr(cfg.beta_phi), "a": repr(cfg.a),
            "confounding_bias": repr(truth.confounding_bias())}
    if delta is not None:
        meta["target_delta"] = repr(delta)
    write_metadata(out / "metadata.txt", meta)
    print(f"wrote {out}/obs.csv ({data.obs.n} rows), rand.csv ({data.rand.n}), test.csv ({args.test_size})")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    kw = {}
    if args.steps is not None:
        kw["steps"] = args.steps
    if args.d_phi is not None:
        kw["d_phi"] = args.d_phi
    return TrainConfig(**kw)


def cmd_fit(args) -> int:
    try:
        check_names([args.estimator])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = CombinedData(load_csv(args.obs), load_csv(args.rand))
    opts = EstimatorOptions(train=_train_config(args))
    model = fit_named(args.estimator, data, opts, lambda label: label_stream((args.seed,), label))
    save_any(model, args.out, args.estimator)
    print(f"saved {args.estimator} model to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    test = load_csv(args.test)
    if test.tau is None:
        raise ParseError(f"{args.test}: needs a 'tau' column with reference effects")
    try:
        model = load_any(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load model {args.model}: {exc}") from None
    print(f"sqrt_pehe={sqrt_pehe(model, test.x, test.tau):.6f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    estimators = tuple(e.strip() for e in args.estimators.split(",")) if args.estimators else None
    spec = load_spec(args.config, seed=args.seed, parallelism=args.parallelism,
                     estimators=estimators, out_dir=args.out)
    if spec.out_dir is None:
        raise ConfigError("no output directory: pass --out or set out_dir in [experiment]")
    record = run_experiment(spec)
    total = len(record.rows)
    print(f"{total} rows, {record.n_failed} failed; wrote {record.raw_path} and {record.aggregate_path}")
    if total and record.n_failed == total:
        return EXIT_ALL_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    for p in args.raw:
        if not Path(p).is_file():
            raise ConfigError(f"no such raw CSV: {p}")
    out = report(args.raw, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m cornet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write obs/rand/test CSVs from a [dgp] config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--test-size", type=int, default=2000)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one estimator on observational and randomized CSVs")
    f.add_argument("--estimator", required=True, help=", ".join(ESTIMATORS))
    f.add_argument("--obs", required=True)
    f.add_argument("--rand", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--steps", type=int)
    f.add_argument("--d-phi", type=int)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="sqrt(PEHE) of a saved model on a CSV with a tau column")
    e.add_argument("--model", required=True)
    e.add_argument("--test", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a sweep from an INI config")
    x.add_argument("--config", required=True)
    x.add_argument("--out")
    x.add_argument("--seed", type=int)
    x.add_argument("--parallelism", type=int)
    x.add_argument("--estimators")
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="re-aggregate raw CSVs")
    r.add_argument("--raw", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CornetError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
