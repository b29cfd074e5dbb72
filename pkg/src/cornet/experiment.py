"""Seeded simulation sweeps with CSV output.

A sweep is a grid of DGP settings crossed with replications.  Each
(grid point, replication) cell generates data, fits every requested
estimator and scores it by sqrt(PEHE) on a fresh test draw from the
observational covariate law.

Randomness is derived from ``(seed, grid index, rep)`` only, so results do
not depend on execution order or on the number of worker processes.  The
ground truth, the randomized rows and the test covariates of replication
``r`` are shared by all grid points (common random numbers); the
observational rows and all training randomness are per cell.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import DgpConfig, calibrate_beta, matched_sigma_u, sample
from .errors import ConfigError
from .metrics import PeheReport, sqrt_pehe
from .registry import ESTIMATORS, EstimatorOptions, _Fits, check_names, fit_named, label_stream
from .training import TrainConfig

log = logging.getLogger(__name__)

RAW_COLUMNS = ("scenario", "grid_key", "grid_value", "estimator", "rep", "seed",
               "sqrt_pehe", "wall_ms", "error")
AGG_COLUMNS = ("scenario", "grid_key", "grid_value", "estimator",
               "mean_sqrt_pehe", "sd_sqrt_pehe", "n_reps")
SD_NOTE = "# sd_sqrt_pehe is the sample standard deviation (ddof=1) over replications"
SWEEP_KEYS = ("n_conf", "n_unc", "sigma_u", "delta", "beta", "beta_scale", "beta_phi", "a",
              "sigma_eps")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    dgp: DgpConfig
    sweep: tuple                       # ((key, (v1, v2, ...)), ...); cartesian product
    estimators: tuple[str, ...]
    reps: int = 10
    seed: int = 0
    delta: float | None = None         # calibrate beta to this confounding bias
    beta_scale: float = 1.0
    test_size: int = 2000
    parallelism: int = 1
    out_dir: str | None = None
    options: EstimatorOptions = field(default_factory=EstimatorOptions)
    timing_in_raw: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.sweep:
            raise ConfigError("at least one sweep dimension is required")
        for key, values in self.sweep:
            if key not in SWEEP_KEYS:
                raise ConfigError(f"cannot sweep {key!r}; sweepable: {', '.join(SWEEP_KEYS)}")
            if not values:
                raise ConfigError(f"sweep {key!r} has no values")
        try:
            check_names(self.estimators)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.estimators:
            raise ConfigError("no estimators requested")

    def grid(self):
        keys = [k for k, _ in self.sweep]
        return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in self.sweep))]

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("out_dir")
        doc.pop("parallelism")
        doc.pop("timing_in_raw")
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    spec_hash: str
    rows: list                         # dicts keyed by RAW_COLUMNS
    wall_ms: dict = field(default_factory=dict)   # (grid index, rep, estimator) -> ms
    raw_path: Path | None = None
    aggregate_path: Path | None = None

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["error"])


# config files ---------------------------------------------------------------

def _number(text: str):
    value = float(text)
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def _list(text: str):
    return [p.strip() for p in text.replace("\n", ",").split(",") if p.strip()]


# configparser lowercases keys
_OPTION_FLOATS = {"tau_avg_lambda": "tau_avg_lambda", "tau_weight_lambda": "tau_weight_Lambda",
                  "kallus_e": "kallus_e", "mixup_alpha": "mixup_alpha",
                  "plus_lambda_d": "plus_lambda_d", "plus_lambda_delta": "plus_lambda_delta"}
_TRAIN_KEYS = {"steps": int, "epochs": int, "learning_rate": float, "d_phi": int,
               "val_fraction": float, "patience": int, "minibatch": int, "full_batch_max": int}


def spec_from_ini(text: str, **overrides) -> ExperimentSpec:
    """Build a spec from ``[experiment]``, ``[dgp]``, ``[sweep]`` and ``[estimator]`` sections."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sect in ("experiment", "dgp", "sweep"):
        if not cp.has_section(sect):
            raise ConfigError(f"missing [{sect}] section")
    try:
        ex = cp["experiment"]
        dgp_fields = {f for f in DgpConfig.__dataclass_fields__}
        dgp_kw, delta, beta_scale = {}, None, 1.0
        for key, raw in cp["dgp"].items():
            if key == "delta":
                delta = float(raw)
            elif key == "beta_scale":
                beta_scale = float(raw)
            elif key == "scenario":
                dgp_kw[key] = raw.strip()
            elif key in dgp_fields:
                dgp_kw[key] = _number(raw)
            else:
                raise ConfigError(f"unknown [dgp] key {key!r}")
        sweep = tuple((key, tuple(_number(v) for v in _list(raw))) for key, raw in cp["sweep"].items())

        train_kw, opt_kw = {}, {}
        if cp.has_section("estimator"):
            for key, raw in cp["estimator"].items():
                if key in _TRAIN_KEYS:
                    train_kw[key] = _TRAIN_KEYS[key](raw)
                elif key == "hidden":
                    train_kw[key] = tuple(int(v) for v in _list(raw))
                elif key == "kallus_propensity":
                    opt_kw[key] = raw.strip()
                elif key in _OPTION_FLOATS:
                    opt_kw[_OPTION_FLOATS[key]] = float(raw)
                else:
                    raise ConfigError(f"unknown [estimator] key {key!r}")
        kw = dict(name=ex.get("name", "experiment").strip(),
                  dgp=DgpConfig(**dgp_kw), sweep=sweep,
                  estimators=tuple(_list(ex.get("estimators", ",".join(ESTIMATORS)))),
                  reps=ex.getint("reps", 10), seed=ex.getint("seed", 0),
                  delta=delta, beta_scale=beta_scale,
                  test_size=ex.getint("test_size", 2000),
                  parallelism=ex.getint("parallelism", 1),
                  out_dir=ex.get("out_dir"),
                  options=EstimatorOptions(train=TrainConfig(**train_kw), **opt_kw))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**kw)


def load_spec(path, **overrides) -> ExperimentSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return spec_from_ini(text, **overrides)


# cells ----------------------------------------------------------------------

def cell_seed(seed: int, grid_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, grid_index, rep]).generate_state(1, np.uint64)[0])


def rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1, np.uint64)[0] >> 1)


def cell_config(spec: ExperimentSpec, point: dict, rep: int):
    """DGP config (with calibrated beta) for one grid point and replication."""
    cfg = spec.dgp.replace(seed=rep_seed(spec.seed, rep))
    delta, scale = spec.delta, spec.beta_scale
    changes = {}
    for key, value in point.items():
        if key == "delta":
            delta = float(value)
        elif key == "beta_scale":
            scale = float(value)
        else:
            changes[key] = value
    if cfg.scenario == "matched_gaussian" and "a" in changes and "sigma_u" not in changes:
        changes["sigma_u"] = matched_sigma_u(float(changes["a"]))
    cfg = cfg.replace(**changes)
    if delta is not None and "beta" not in point:
        cfg = cfg.replace(beta=calibrate_beta(cfg, delta))
    return cfg.replace(beta=cfg.beta * scale)


def _format_value(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def run_cell(spec: ExperimentSpec, grid_index: int, rep: int):
    """Fit and score every estimator of one cell; returns ``(rows, timings)``."""
    point = spec.grid()[grid_index]
    grid_key = ";".join(point)
    grid_value = ";".join(_format_value(v) for v in point.values())
    seed = cell_seed(spec.seed, grid_index, rep)
    base = dict(scenario=spec.name, grid_key=grid_key, grid_value=grid_value, rep=rep, seed=seed)
    rows, timings = [], {}
    try:
        cfg = cell_config(spec, point, rep)
        data, truth = sample(cfg, np.random.SeedSequence([spec.seed, grid_index, rep, 1]),
                             rand_rng=np.random.SeedSequence([spec.seed, rep, 2]))
        x_test = np.random.default_rng([spec.seed, rep, 3]).standard_normal((spec.test_size, cfg.d))
        tau_test = truth.tau(x_test)
    except Exception as exc:
        msg = _one_line(exc)
        return [dict(base, estimator=name, sqrt_pehe=math.nan, wall_ms="", error=msg)
                for name in spec.estimators], timings

    entropy = (spec.seed, grid_index, rep)
    stream = lambda label: label_stream(entropy, label)  # noqa: E731
    shared = _Fits(data, spec.options, stream)
    for name in spec.estimators:
        t0 = time.perf_counter()
        try:
            model = fit_named(name, data, spec.options, stream, shared)
            value, err = sqrt_pehe(model, x_test, tau_test), ""
            if not math.isfinite(value):
                err = "non-finite sqrt_pehe"
        except Exception as exc:
            value, err = math.nan, _one_line(exc)
        ms = (time.perf_counter() - t0) * 1e3
        timings[(grid_index, rep, name)] = ms
        rows.append(dict(base, estimator=name, sqrt_pehe=value,
                         wall_ms=f"{ms:.1f}" if spec.timing_in_raw else "", error=err))
    return rows, timings


def _one_line(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ").strip()


def _run_cell_star(args):
    return run_cell(*args)


def sort_key(row, order=ESTIMATORS):
    return (row["grid_key"], _grid_sort(row["grid_value"]), int(row["rep"]),
            order.index(row["estimator"]) if row["estimator"] in order else len(order),
            row["estimator"])


def _grid_sort(value: str):
    out = []
    for part in str(value).split(";"):
        try:
            out.append((0, float(part), ""))
        except ValueError:
            out.append((1, 0.0, part))
    return tuple(out)


def run_experiment(spec: ExperimentSpec, out_dir=None) -> RunRecord:
    """Run all cells and, when an output directory is known, write the CSVs."""
    cells = [(spec, g, r) for g in range(len(spec.grid())) for r in range(spec.reps)]
    rows, timings = [], {}
    if spec.parallelism == 1 or len(cells) == 1:
        results = map(_run_cell_star, cells)
    else:
        pool = ProcessPoolExecutor(max_workers=spec.parallelism)
        results = pool.map(_run_cell_star, cells)
    try:
        for cell_rows, cell_times in results:
            rows.extend(cell_rows)
            timings.update(cell_times)
    finally:
        if spec.parallelism > 1 and len(cells) > 1:
            pool.shutdown()
    rows.sort(key=sort_key)
    record = RunRecord(spec.digest(), rows, timings)
    out_dir = out_dir or spec.out_dir
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        record.raw_path = out / "raw.csv"
        record.aggregate_path = out / "aggregate.csv"
        record.raw_path.write_text(raw_csv_text(rows), encoding="utf-8")
        record.aggregate_path.write_text(aggregate_csv_text(rows), encoding="utf-8")
        (out / "timing.csv").write_text(_timing_text(timings), encoding="utf-8")
        (out / "run.json").write_text(json.dumps(
            {"spec_hash": record.spec_hash, "name": spec.name, "cells": len(cells),
             "rows": len(rows), "failed_rows": record.n_failed}, indent=1) + "\n", encoding="utf-8")
    return record


# CSV ------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def raw_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in RAW_COLUMNS])
    return buf.getvalue()


def read_raw_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = [c for c in RAW_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ConfigError(f"{path}: raw CSV lacks column(s) {', '.join(missing)}")
    rows = []
    for row in reader:
        row = dict(row)
        row["sqrt_pehe"] = float(row["sqrt_pehe"]) if row["sqrt_pehe"] else math.nan
        rows.append(row)
    return rows


def aggregate(rows) -> list[dict]:
    """Mean and ddof=1 sd of finite sqrt_pehe values per (scenario, grid point, estimator)."""
    groups = {}
    for row in rows:
        key = (row["scenario"], row["grid_key"], row["grid_value"], row["estimator"])
        groups.setdefault(key, []).append(float(row["sqrt_pehe"]))
    out = []
    for key, values in groups.items():
        finite = [v for v in values if math.isfinite(v)]
        rep = PeheReport.from_values(key[3], finite) if finite else None
        out.append(dict(zip(AGG_COLUMNS[:4], key),
                        mean_sqrt_pehe=rep.sqrt_pehe_mean if rep else math.nan,
                        sd_sqrt_pehe=rep.sqrt_pehe_sd if rep else math.nan,
                        n_reps=len(finite)))
    out.sort(key=lambda r: (r["scenario"], r["grid_key"], _grid_sort(r["grid_value"]),
                            *sort_key(dict(r, rep=0))[3:]))
    return out


def aggregate_csv_text(rows) -> str:
    buf = io.StringIO()
    buf.write(SD_NOTE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGG_COLUMNS)
    for row in aggregate(rows):
        w.writerow([_fmt(row[c]) for c in AGG_COLUMNS])
    return buf.getvalue()


def report(raw_paths, out_path) -> Path:
    """Re-aggregate one or more raw CSVs; rerunning on the same input gives the same file."""
    rows = []
    for p in raw_paths:
        rows.extend(read_raw_csv(p))
    out = Path(out_path)
    out.write_text(aggregate_csv_text(rows), encoding="utf-8")
    return out


def read_aggregate(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        row["mean_sqrt_pehe"] = float(row["mean_sqrt_pehe"])
        row["sd_sqrt_pehe"] = float(row["sd_sqrt_pehe"])
        row["n_reps"] = int(row["n_reps"])
        rows.append(row)
    return rows


def _timing_text(timings) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid_index", "rep", "estimator", "wall_ms"])
    for (g, r, name), ms in sorted(timings.items()):
        w.writerow([g, r, name, f"{ms:.1f}"])
    return buf.getvalue()


def summary_table(rows, scenario=None) -> dict:
    """``{(grid_value, estimator): (mean, sd, n)}`` from raw rows, for quick checks."""
    out = {}
    for r in aggregate(rows):
        if scenario is None or r["scenario"] == scenario:
            out[(r["grid_value"], r["estimator"])] = (r["mean_sqrt_pehe"], r["sd_sqrt_pehe"], r["n_reps"])
    return out

