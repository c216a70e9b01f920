"""Nested cross-validation with naive and fairness-aware hyperparameter selection.

Naive selection keeps the combination with the lowest inner-CV MAPE. The
fairness-aware policy (``nvp``, alias ``nvm``) shortlists every combination
whose inner-CV MAPE is at most ``best / error_fraction`` and returns the one
with the lowest inner-CV DGF. Ties go to the larger ``lam``, then the smaller
``gamma``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .grid import BinnedDataset, Dataset, DiscretizationGrid, assign_bins, make_grid
from .kernels import KernelSpec, build_constraints, gram
from .solver import SolverConfig, SolverError, fit_path

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(float(10.0 ** e) for e in np.arange(-4.0, 4.01, 0.5))
DEFAULT_GAMMAS = tuple(float(10.0 ** e) for e in range(-4, 5))


@dataclass(frozen=True)
class HyperGrid:
    lambdas: tuple = DEFAULT_LAMBDAS
    gammas: tuple = DEFAULT_GAMMAS

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        gams = tuple(float(v) for v in self.gammas)
        for name, vals in (("lambdas", lams), ("gammas", gams)):
            if any(v <= 0 for v in vals):
                raise ValueError(f"{name} must be positive")
            if list(vals) != sorted(vals):
                raise ValueError(f"{name} must be sorted ascending")
        if not lams:
            raise ValueError("need at least one lambda")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "gammas", gams)

    def thinned(self) -> "HyperGrid":
        """Every other value of each axis."""
        return HyperGrid(self.lambdas[::2], self.gammas[::2])

    def gammas_for(self, kernel: str) -> tuple:
        if kernel == "linear":
            return (None,)
        if not self.gammas:
            raise ValueError("gaussian kernel needs a non-empty gamma grid")
        return self.gammas


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str = "naive"
    error_fraction: float = 0.9

    def __post_init__(self):
        kind = "nvp" if self.kind == "nvm" else self.kind
        if kind not in ("naive", "nvp"):
            raise ValueError(f"unknown selection policy {self.kind!r}")
        if not 0 < self.error_fraction <= 1:
            raise ValueError("error_fraction must be in (0, 1]")
        object.__setattr__(self, "kind", kind)


@dataclass(frozen=True)
class ExperimentSetup:
    """Everything an experiment needs besides the data."""

    kernel: str = "gaussian"
    fair: bool = True
    epsilon_hat: float = 0.0
    K: int = 10
    include_s: bool = False
    centered: bool = False
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    grid: HyperGrid = field(default_factory=HyperGrid)
    folds: int = 10
    inner_folds: int = 10
    repetitions: int = 30
    seed: int = 0
    normalization: str = "KQ2"

    def solver_config(self) -> SolverConfig:
        eps = self.epsilon_hat if self.fair else math.inf
        return SolverConfig(epsilon_hat=eps, centered=self.centered)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon_hat"] = self.epsilon_hat if math.isfinite(self.epsilon_hat) else "inf"
        d["grid"] = {"lambdas": list(self.grid.lambdas), "gammas": list(self.grid.gammas)}
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def kfold_split(n: int, folds: int, seed) -> list:
    """Shuffled ``folds``-way partition of ``range(n)`` as ``(train, test)`` index pairs."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    tests = np.array_split(perm, folds)
    return [(np.sort(np.concatenate(tests[:i] + tests[i + 1:])), np.sort(t))
            for i, t in enumerate(tests)]


def _derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def bin_train_test(train: Dataset, test: Dataset, s_grid: DiscretizationGrid, K: int,
                   include_s: bool) -> tuple[BinnedDataset, BinnedDataset]:
    """Label grid fitted on the training targets, reused (with clamping) on the test rows."""
    y_grid = make_grid(train.y, K, "uniform")
    return (assign_bins(train, y_grid, s_grid, include_s),
            assign_bins(test, y_grid, s_grid, include_s, clamp_labels=True))


def evaluate_path(train_b: BinnedDataset, test_b: BinnedDataset, kernel: KernelSpec, lambdas,
                  template: SolverConfig, normalization: str = "KQ2", system=None) -> list[dict]:
    """Fit every ``lam`` on the training cells and score each on the test cells."""
    if template.constrained and system is None:
        system = build_constraints(train_b, kernel)
    Z = train_b.inputs()
    K = gram(Z, Z, kernel)
    models = fit_path(train_b, kernel, lambdas, template, system=system, gram_matrix=K)
    K_test = gram(test_b.inputs(), Z, kernel)
    rows = []
    for lam, model in zip(lambdas, models):
        pred = K_test @ model.alpha + model.intercept
        table = metrics.conditional_probabilities(pred, test_b)
        dh = metrics.delta_hat(pred, test_b, normalization)
        rows.append({
            "lambda": float(lam),
            "gamma": kernel.gamma,
            "mape": metrics.mape(pred, test_b.y),
            "dgf": metrics.pairwise_gap_sum(table, True, normalization),
            "dgf_raw": metrics.pairwise_gap_sum(table),
            "delta_hat": dh["normalized"],
            "delta_hat_raw": dh["raw"],
            "p_hat": np.where(table.defined, table.values, np.nan),
            "constraint_l1_norm": model.diagnostics.get("constraint_l1_norm"),
            "iterations": model.diagnostics.get("iterations", 0),
        })
    return rows


def select_index(lambdas, gammas, mape, dgf, policy: SelectionPolicy) -> int:
    """Apply a selection policy to per-combination scores."""
    lambdas = np.asarray(lambdas, dtype=float)
    gammas = np.array([0.0 if g is None else g for g in gammas], dtype=float)
    mape = np.asarray(mape, dtype=float)
    dgf = np.asarray(dgf, dtype=float)
    candidates = np.arange(mape.size)
    if policy.kind == "naive":
        primary = mape
    else:
        best = np.min(mape)
        candidates = candidates[mape <= best / policy.error_fraction]
        primary = dgf
    return int(min(candidates, key=lambda i: (primary[i], -lambdas[i], gammas[i])))


@dataclass
class Selection:
    lam: float
    gamma: float | None
    scores: list


def inner_select(train: BinnedDataset, grid: HyperGrid, policy: SelectionPolicy,
                 template: SolverConfig, kernel: str = "gaussian", folds: int = 10, seed=0,
                 normalization: str = "KQ2") -> Selection:
    """Pick ``(lam, gamma)`` by ``folds``-fold CV on ``train``.

    Each inner split re-fits its label grid (same number of bins as
    ``train.y_grid``) on its own training part. ``scores`` lists the mean
    inner MAPE and DGF of every combination.
    """
    data, s_grid, K = train.data, train.s_grid, train.K
    combos = [(lam, g) for g in grid.gammas_for(kernel) for lam in grid.lambdas]
    mape_sum = np.zeros(len(combos))
    dgf_sum = np.zeros(len(combos))
    for tr, va in kfold_split(len(data), folds, seed):
        tr_b, va_b = bin_train_test(data.subset(tr), data.subset(va), s_grid, K,
                                    train.include_s_in_model)
        # M does not depend on the kernel, so one system serves every gamma
        system = build_constraints(tr_b, KernelSpec("linear")) if template.constrained else None
        j = 0
        for g in grid.gammas_for(kernel):
            spec = KernelSpec(kernel, g)
            for row in evaluate_path(tr_b, va_b, spec, grid.lambdas, template, normalization, system):
                mape_sum[j] += row["mape"]
                dgf_sum[j] += row["dgf"]
                j += 1
    mape_mean, dgf_mean = mape_sum / folds, dgf_sum / folds
    i = select_index([c[0] for c in combos], [c[1] for c in combos], mape_mean, dgf_mean, policy)
    scores = [{"lambda": c[0], "gamma": c[1], "mape": float(m), "dgf": float(d)}
              for c, m, d in zip(combos, mape_mean, dgf_mean)]
    return Selection(combos[i][0], combos[i][1], scores)


def _outer_unit(args):
    data, s_grid, setup, rep, fold, tr, te = args
    template = setup.solver_config()
    row = {"repetition": rep, "fold": fold}
    try:
        train_b, test_b = bin_train_test(data.subset(tr), data.subset(te), s_grid, setup.K,
                                         setup.include_s)
        sel = inner_select(train_b, setup.grid, setup.policy, template, setup.kernel,
                           setup.inner_folds, _derive_seed(setup.seed, rep, fold + 1),
                           setup.normalization)
        res = evaluate_path(train_b, test_b, KernelSpec(setup.kernel, sel.gamma), [sel.lam],
                            template, setup.normalization)[0]
        row.update(res)
        row["inner_scores"] = sel.scores
    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("repetition %d fold %d failed: %s", rep, fold, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(v)), "std": float(np.std(v, ddof=1)) if v.size > 1 else 0.0}


@dataclass
class ExperimentReport:
    setup: ExperimentSetup
    folds: list
    s_grid: list
    data_hash: str = ""

    @property
    def completed(self) -> list:
        return [r for r in self.folds if "error" not in r]

    @property
    def incomplete(self) -> bool:
        return len(self.completed) < len(self.folds)

    def aggregate(self, key: str) -> dict:
        return _summary([r[key] for r in self.completed])

    def mean_p_hat(self) -> np.ndarray:
        tables = [r["p_hat"] for r in self.completed]
        if not tables:
            return np.empty((0, 0))
        with np.errstate(invalid="ignore"):
            stack = np.stack(tables)
            counts = np.sum(~np.isnan(stack), axis=0)
            total = np.nansum(stack, axis=0)
        return np.where(counts > 0, total / np.maximum(counts, 1), np.nan)

    def hyperparameter_counts(self) -> dict:
        c = Counter(f"lambda={r['lambda']:.6g},gamma={r['gamma']:.6g}" if r["gamma"] is not None
                    else f"lambda={r['lambda']:.6g}" for r in self.completed)
        return dict(sorted(c.items()))

    def to_dict(self) -> dict:
        folds = []
        for r in self.folds:
            row = {k: v for k, v in r.items() if k != "p_hat"}
            if "p_hat" in r:
                row["p_hat"] = [[None if np.isnan(x) else float(x) for x in line] for line in r["p_hat"]]
            folds.append(row)
        mean_p = self.mean_p_hat()
        return {
            "setup": self.setup.to_dict(),
            "config_fingerprint": self.setup.fingerprint(),
            "data_hash": self.data_hash,
            "s_grid": self.s_grid,
            "incomplete": self.incomplete,
            "n_folds_completed": len(self.completed),
            "mape": self.aggregate("mape"),
            "dgf": self.aggregate("dgf"),
            "dgf_raw": self.aggregate("dgf_raw"),
            "delta_hat": self.aggregate("delta_hat"),
            "delta_hat_raw": self.aggregate("delta_hat_raw"),
            "chosen_hyperparameters": self.hyperparameter_counts(),
            "mean_p_hat": [[None if np.isnan(x) else float(x) for x in line] for line in mean_p],
            "folds": folds,
        }


def data_fingerprint(data: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (data.X, data.s, data.y):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()


def run_experiment(data: Dataset, s_grid: DiscretizationGrid, setup: ExperimentSetup,
                   jobs: int = 1) -> ExperimentReport:
    """Repeated nested CV.

    Every repetition reshuffles the outer split (and, through derived seeds,
    the inner splits). Each outer fold selects hyperparameters on its
    training part, refits there and is scored on its test part. Work units
    run in ``jobs`` processes; results are collected in canonical order so the
    report does not depend on ``jobs``.
    """
    units = []
    for rep in range(setup.repetitions):
        for fold, (tr, te) in enumerate(kfold_split(len(data), setup.folds,
                                                    _derive_seed(setup.seed, rep))):
            units.append((data, s_grid, setup, rep, fold, tr, te))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_outer_unit, units))
    else:
        rows = [_outer_unit(u) for u in units]
    return ExperimentReport(setup, rows, s_grid.to_list(), data_fingerprint(data))
