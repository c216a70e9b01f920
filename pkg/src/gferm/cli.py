"""Command-line driver: ``fair-erm {prepare,fit,experiment,sweep}``.

Exit codes: 0 success, 2 invalid config or data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import metrics
from .datasets import (ColumnSpec, DataError, SyntheticSpec, default_s_grid, generate_synthetic,
                       load_csv, prepare_crime, write_normalized_csv)
from .grid import GridError
from .kernels import KernelSpec
from .selection import (ExperimentReport, ExperimentSetup, HyperGrid, SelectionPolicy,
                        bin_train_test, data_fingerprint, run_experiment)
from .solver import SolverConfig, SolverError, fit

log = logging.getLogger("gferm")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["crime-binary", "crime-continuous", "csv", "synthetic"]},
                "path": {"type": "string"},
                "target": {"type": "string"},
                "sensitive": {"type": "string"},
                "standardize": {"type": "boolean"},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n": _INT, "d": _INT, "group_effect": _NUM,
                        "noise_std": {"type": "number", "minimum": 0},
                        "sensitive_kind": {"enum": ["binary", "continuous-uniform"]},
                        "offset": _NUM, "seed": {"type": "integer"},
                    },
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel": {"enum": ["linear", "gaussian"]},
                "fair": {"type": "boolean"},
                "epsilon_hat": {"type": "number", "minimum": 0},
                "epsilon_normalized": {"type": "number", "minimum": 0},
                "K": _INT,
                "Q": _INT,
                "include_sensitive": {"type": "boolean"},
                "centered": {"type": "boolean"},
                "lambda": _POS,
                "gamma": _POS,
            },
        },
        "selection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["naive", "nvp", "nvm"]},
                "error_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "repetitions": _INT,
                "folds": {"type": "integer", "minimum": 2},
                "inner_folds": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "thin_grid": {"type": "boolean"},
                "normalization": {"enum": ["KQ2", "KQ(Q-1)"]},
            },
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambdas": {"type": "array", "items": _POS, "minItems": 1},
                "gammas": {"type": "array", "items": _POS},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "emit_histograms": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "model": {"kernel": "gaussian", "fair": True, "epsilon_hat": 0.0, "K": 10,
              "include_sensitive": False, "centered": False, "lambda": 1.0, "gamma": 1.0},
    "selection": {"policy": "nvp", "error_fraction": 0.9, "repetitions": 30, "folds": 10,
                  "inner_folds": 10, "seed": 0, "thin_grid": False, "normalization": "KQ2"},
    "grids": {"lambdas": list(HyperGrid().lambdas), "gammas": list(HyperGrid().gammas)},
    "output": {"dir": "out", "emit_histograms": True},
}


class ConfigError(ValueError):
    pass


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and fill in defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        cfg.setdefault(section, {}).update(copy.deepcopy(values))
    ds = cfg["dataset"]
    if ds["kind"] != "synthetic" and "path" not in ds:
        raise ConfigError(f"dataset kind {ds['kind']} needs a path")
    if ds["kind"] == "csv" and not ("target" in ds and "sensitive" in ds):
        raise ConfigError("csv datasets need 'target' and 'sensitive' column names")
    if "epsilon_normalized" in raw.get("model", {}) and "epsilon_hat" in raw.get("model", {}):
        raise ConfigError("give either epsilon_hat or epsilon_normalized, not both")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(cfg: dict):
    """Dataset, sensitive grid and content hash described by a resolved config."""
    ds, model = cfg["dataset"], cfg["model"]
    kind = ds["kind"]
    if kind.startswith("crime-"):
        data, s_grid = prepare_crime(ds["path"], kind.split("-", 1)[1])
        return data, s_grid, _file_hash(ds["path"])
    if kind == "csv":
        data = load_csv(ds["path"], ColumnSpec(ds["target"], ds["sensitive"],
                                               standardize=ds.get("standardize", False)))
        digest = _file_hash(ds["path"])
    else:
        data = generate_synthetic(SyntheticSpec(**ds.get("synthetic", {})))
        digest = data_fingerprint(data)
    return data, default_s_grid(data.s, model.get("Q")), digest


def epsilon_hat_of(cfg: dict, Q: int) -> float:
    model = cfg["model"]
    if not model["fair"]:
        return math.inf
    if "epsilon_normalized" in model:
        return float(model["epsilon_normalized"]) * model["K"] * Q * Q
    return float(model["epsilon_hat"])


def setup_of(cfg: dict, Q: int) -> ExperimentSetup:
    model, sel, grids = cfg["model"], cfg["selection"], cfg["grids"]
    grid = HyperGrid(tuple(grids["lambdas"]), tuple(grids.get("gammas", ())))
    if sel["thin_grid"]:
        grid = grid.thinned()
    eps = epsilon_hat_of(cfg, Q)
    return ExperimentSetup(
        kernel=model["kernel"], fair=model["fair"], epsilon_hat=eps if math.isfinite(eps) else 0.0,
        K=model["K"], include_s=model["include_sensitive"], centered=model["centered"],
        policy=SelectionPolicy(sel["policy"], sel["error_fraction"]), grid=grid,
        folds=sel["folds"], inner_folds=sel["inner_folds"], repetitions=sel["repetitions"],
        seed=sel["seed"], normalization=sel["normalization"])


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _jobs(arg) -> int:
    env = os.environ.get("FAIR_ERM_JOBS")
    if env:
        return max(1, int(env))
    return max(1, arg or os.cpu_count() or 1)


def cmd_prepare(args) -> int:
    data, s_grid = prepare_crime(args.input, args.variant)
    write_normalized_csv(data, args.out)
    meta = data.meta
    if meta["variant"] == "binary-sensitive":
        c, m = meta["group_counts"], meta["group_mean_target"]
        print(f"s=1: {c[1]}, s=0: {c[0]}")
        print(f"mean target s=1: {m[1]:.4f}, s=0: {m[0]:.4f} (threshold {meta['threshold']})")
    else:
        bins = meta["bin_counts"]
        print("bin occupancies: " + ", ".join(str(b) for b in bins) + f" (total {sum(bins)} of {len(data)})")
    if "target_shift" in meta:
        print(f"targets shifted by {meta['target_shift']} to avoid zeros")
    print(f"wrote {len(data)} rows, {data.X.shape[1]} features to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    data, s_grid, digest = load_dataset(cfg)
    model_cfg = cfg["model"]
    rng = np.random.default_rng(cfg["selection"]["seed"])
    perm = rng.permutation(len(data))
    n_test = max(1, int(round(0.2 * len(data))))
    te, tr = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    train_b, test_b = bin_train_test(data.subset(tr), data.subset(te), s_grid, model_cfg["K"],
                                     model_cfg["include_sensitive"])
    kernel = KernelSpec(model_cfg["kernel"],
                        model_cfg["gamma"] if model_cfg["kernel"] == "gaussian" else None)
    solver_cfg = SolverConfig(lam=model_cfg["lambda"], epsilon_hat=epsilon_hat_of(cfg, s_grid.n_bins),
                              centered=model_cfg["centered"], seed=cfg["selection"]["seed"])
    model = fit(train_b, kernel, None, solver_cfg)
    pred = model.predict(test_b.inputs())
    norm = cfg["selection"]["normalization"]
    table = metrics.conditional_probabilities(pred, test_b)
    dh = metrics.delta_hat(pred, test_b, norm)
    diag = model.diagnostics
    result = {
        "config": cfg,
        "data_hash": digest,
        "n_train": len(tr),
        "n_test": len(te),
        "mape": metrics.mape(pred, test_b.y),
        "dgf_raw": metrics.pairwise_gap_sum(table),
        "dgf_normalized": metrics.pairwise_gap_sum(table, True, norm),
        "delta_hat": dh["normalized"],
        "delta_hat_raw": dh["raw"],
        "constraint_l1_norm": diag.get("constraint_l1_norm"),
        "iterations": diag.get("iterations", 0),
        "objective": diag["objective"],
        "converged": diag.get("converged", True),
    }
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({"kernel": kernel.to_dict(), "alpha": model.alpha, "intercept": model.intercept,
                "training_inputs": model.training_inputs, "include_sensitive": train_b.include_s_in_model,
                "y_grid": train_b.y_grid.to_list(), "s_grid": s_grid.to_list()},
               out / "model.json")
    _dump_json(result, out / "metrics.json")
    print(f"mape {result['mape']:.4f}  dgf {result['dgf_normalized']:.4f}  "
          f"constraint {result['constraint_l1_norm']}  -> {out}")
    return EXIT_OK


FOLD_COLUMNS = ["repetition", "fold", "lambda", "gamma", "mape", "dgf", "delta_hat"]


def write_experiment(report: ExperimentReport, cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = report.to_dict()
    body["config"] = cfg
    _dump_json(body, out / "report.json")
    with open(out / "folds.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FOLD_COLUMNS)
        for r in report.completed:
            w.writerow([r["repetition"], r["fold"], repr(r["lambda"]),
                        "" if r["gamma"] is None else repr(r["gamma"]),
                        repr(r["mape"]), repr(r["dgf"]), repr(r["delta_hat"])])
    if cfg["output"]["emit_histograms"]:
        p = report.mean_p_hat()
        with open(out / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "q", "p_hat"])
            for k in range(p.shape[0]):
                for q in range(p.shape[1]):
                    w.writerow([k, q, "" if np.isnan(p[k, q]) else repr(float(p[k, q]))])


def _run(cfg: dict, jobs: int, data=None, s_grid=None, digest=None):
    if data is None:
        data, s_grid, digest = load_dataset(cfg)
    setup = setup_of(cfg, s_grid.n_bins)
    report = run_experiment(data, s_grid, setup, jobs=jobs)
    report.data_hash = digest
    return report


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    report = _run(cfg, _jobs(args.jobs))
    out = Path(cfg["output"]["dir"])
    write_experiment(report, cfg, out)
    mape, dgf = report.aggregate("mape"), report.aggregate("dgf")
    if not report.completed:
        print(f"every fold failed; partial report in {out}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"MAPE {mape['mean']:.3f} ± {mape['std']:.3f}  DGF {dgf['mean']:.4f} ± {dgf['std']:.4f}"
          f"{'  (incomplete)' if report.incomplete else ''}  -> {out}")
    return EXIT_OK


def parse_vary(spec: str):
    name, _, values = spec.partition(":")
    if name not in ("epsilon", "K"):
        raise ConfigError(f"--vary must be epsilon:<list> or K:<list>, got {spec!r}")
    items = [v for v in values.split(",") if v.strip()]
    if not items:
        raise ConfigError("empty sweep list")
    conv = float if name == "epsilon" else int
    try:
        return name, [conv(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value in {spec!r}") from exc


SWEEP_COLUMNS = ["vary", "value", "method", "mape_mean", "mape_std", "dgf_mean", "dgf_std",
                 "delta_hat_mean", "n_folds"]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    name, values = parse_vary(args.vary)
    data, s_grid, digest = load_dataset(cfg)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    model = cfg["model"]
    method = (f"{cfg['selection']['policy']} {'fair ' if model['fair'] else ''}"
              f"{'KRLS' if model['kernel'] == 'gaussian' else 'RLS'}")
    rows = []
    for v in values:
        sub = copy.deepcopy(cfg)
        if name == "epsilon":
            sub["model"].pop("epsilon_normalized", None)
            sub["model"]["epsilon_hat"] = v
        else:
            sub["model"]["K"] = v
        sub["output"]["dir"] = str(out / f"{name}_{v}")
        report = _run(sub, _jobs(args.jobs), data, s_grid, digest)
        write_experiment(report, sub, Path(sub["output"]["dir"]))
        m, d, dh = report.aggregate("mape"), report.aggregate("dgf"), report.aggregate("delta_hat")
        rows.append([name, v, method, m["mean"], m["std"], d["mean"], d["std"], dh["mean"],
                     len(report.completed)])
        print(f"{name}={v}: MAPE {m['mean']}, DGF {d['mean']}")
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        w.writerows([[repr(x) if isinstance(x, float) else x for x in r] for r in rows])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fair-erm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("prepare", help="preprocess the Communities and Crime file")
    pp.add_argument("--input", required=True)
    pp.add_argument("--variant", choices=["binary", "continuous"], default="binary")
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_prepare)

    for name, func, help_ in (("fit", cmd_fit, "single 80/20 fit with fixed hyperparameters"),
                              ("experiment", cmd_experiment, "repeated nested cross-validation"),
                              ("sweep", cmd_sweep, "experiment over epsilon or K values")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: logical cores; FAIR_ERM_JOBS overrides)")
        if name == "sweep":
            sp.add_argument("--vary", required=True, help="epsilon:0,0.005,0.01 or K:5,10,20")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, GridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
