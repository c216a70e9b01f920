import json

import numpy as np
import pytest

from gferm import selection
from gferm.datasets import SyntheticSpec, default_s_grid, generate_synthetic
from gferm.kernels import KernelSpec
from gferm.selection import (DEFAULT_GAMMAS, DEFAULT_LAMBDAS, ExperimentSetup, HyperGrid,
                             SelectionPolicy, bin_train_test, evaluate_path, inner_select,
                             kfold_split, run_experiment, select_index)
from gferm.solver import SolverConfig

SMALL_GRID = HyperGrid((0.01, 0.1, 1.0), (0.1, 1.0))


def small_setup(**kw):
    base = dict(kernel="gaussian", fair=True, epsilon_hat=0.0, K=4, grid=SMALL_GRID, folds=2,
                inner_folds=2, repetitions=1, seed=3, policy=SelectionPolicy("nvp"))
    base.update(kw)
    return ExperimentSetup(**base)


@pytest.fixture(scope="module")
def unfair():
    data = generate_synthetic(SyntheticSpec(n=120, d=3, group_effect=2.0, seed=2))
    return data, default_s_grid(data.s)


def test_default_grids():
    assert len(DEFAULT_LAMBDAS) == 17 and len(DEFAULT_GAMMAS) == 9
    assert DEFAULT_LAMBDAS[0] == pytest.approx(1e-4) and DEFAULT_LAMBDAS[-1] == pytest.approx(1e4)
    assert DEFAULT_LAMBDAS[1] == pytest.approx(10 ** -3.5)
    assert HyperGrid().thinned().lambdas == DEFAULT_LAMBDAS[::2]
    assert HyperGrid().gammas_for("linear") == (None,)


@pytest.mark.parametrize("lams,gams", [((1.0, 0.1), ()), ((-1.0,), ()), ((), ())])
def test_grid_validation(lams, gams):
    with pytest.raises(ValueError):
        HyperGrid(lams, gams)


def test_policy_alias_and_validation():
    assert SelectionPolicy("nvm").kind == "nvp"
    with pytest.raises(ValueError):
        SelectionPolicy("best")
    with pytest.raises(ValueError):
        SelectionPolicy("nvp", 0.0)


def test_kfold_examples():
    splits = kfold_split(10, 10, 0)
    assert sorted(int(te[0]) for _, te in splits) == list(range(10))
    sizes = sorted(te.size for _, te in kfold_split(23, 10, 1))
    assert sizes == [2] * 7 + [3] * 3
    a, b = kfold_split(23, 10, 5), kfold_split(23, 10, 5)
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    for tr, te in a:
        assert not set(tr) & set(te) and len(tr) + len(te) == 23
    with pytest.raises(ValueError):
        kfold_split(3, 4, 0)
    with pytest.raises(ValueError):
        kfold_split(10, 1, 0)


def test_select_index_examples():
    naive, nvp = SelectionPolicy("naive"), SelectionPolicy("nvp", 0.9)
    assert select_index([1.0], [None], [5.0], [0.3], naive) == 0
    assert select_index([1.0], [None], [5.0], [0.3], nvp) == 0
    assert select_index([1, 2], [None, None], [10.0, 10.5], [0.2, 0.05], naive) == 0
    assert select_index([1, 2], [None, None], [10.0, 10.5], [0.2, 0.05], nvp) == 1
    # a band of 1.0 keeps only the best error
    assert select_index([1, 2], [None, None], [10.0, 10.5], [0.2, 0.05], SelectionPolicy("nvp", 1.0)) == 0
    # ties: larger lambda, then smaller gamma
    assert select_index([1, 2, 2], [0.5, 1.0, 0.1], [3.0, 3.0, 3.0], [0, 0, 0], naive) == 2


def test_inner_select_naive_is_argmin_of_table(unfair):
    data, s_grid = unfair
    b = selection.assign_bins(data, selection.make_grid(data.y, 4), s_grid)
    sel = inner_select(b, SMALL_GRID, SelectionPolicy("naive"), SolverConfig(epsilon_hat=0.0),
                       "gaussian", folds=3, seed=1)
    best = min(sel.scores, key=lambda r: (r["mape"], -r["lambda"], r["gamma"]))
    assert (sel.lam, sel.gamma) == (best["lambda"], best["gamma"])
    assert len(sel.scores) == 6


def test_inner_select_nvp_rule(unfair):
    data, s_grid = unfair
    b = selection.assign_bins(data, selection.make_grid(data.y, 4), s_grid)
    sel = inner_select(b, SMALL_GRID, SelectionPolicy("nvp"), SolverConfig(epsilon_hat=0.0),
                       "gaussian", folds=3, seed=1)
    best = min(r["mape"] for r in sel.scores)
    band = [r for r in sel.scores if r["mape"] <= best / 0.9]
    pick = min(band, key=lambda r: (r["dgf"], -r["lambda"], r["gamma"]))
    assert (sel.lam, sel.gamma) == (pick["lambda"], pick["gamma"])


def test_label_grid_fitted_on_training_only(unfair):
    data, s_grid = unfair
    tr, te = kfold_split(len(data), 4, 0)[0]
    train_b, test_b = bin_train_test(data.subset(tr), data.subset(te), s_grid, 4, False)
    assert test_b.y_grid == train_b.y_grid
    assert train_b.y_grid.cut_points[0] == data.y[tr].min()
    assert test_b.unassigned.size == 0


def test_report_aggregates_recomputable(unfair):
    data, s_grid = unfair
    rep = run_experiment(data, s_grid, small_setup())
    assert len(rep.completed) == 2 and not rep.incomplete
    mapes = [r["mape"] for r in rep.completed]
    agg = rep.aggregate("mape")
    assert agg["mean"] == pytest.approx(np.mean(mapes), rel=1e-15)
    assert agg["std"] == pytest.approx(np.std(mapes, ddof=1), rel=1e-15)
    d = rep.to_dict()
    json.dumps(d)
    assert d["n_folds_completed"] == 2
    assert set(d) >= {"mape", "dgf", "delta_hat", "chosen_hyperparameters", "mean_p_hat",
                      "config_fingerprint", "folds"}
    assert sum(d["chosen_hyperparameters"].values()) == 2
    assert np.asarray(rep.mean_p_hat()).shape == (4, 2)


def test_infinite_epsilon_equals_unconstrained(unfair):
    data, s_grid = unfair
    a = run_experiment(data, s_grid, small_setup(fair=False))
    b = run_experiment(data, s_grid, small_setup(fair=True, epsilon_hat=float("inf")))
    for x, y in zip(a.completed, b.completed):
        assert x["mape"] == y["mape"] and x["dgf"] == y["dgf"]


def test_parallel_matches_serial(unfair):
    data, s_grid = unfair
    setup = small_setup(repetitions=2)
    a = run_experiment(data, s_grid, setup, jobs=1).to_dict()
    b = run_experiment(data, s_grid, setup, jobs=2).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_failed_fold_is_recorded(unfair, monkeypatch):
    data, s_grid = unfair

    def boom(*args, **kwargs):
        raise selection.SolverError("forced")

    monkeypatch.setattr(selection, "inner_select", boom)
    rep = run_experiment(data, s_grid, small_setup())
    assert rep.incomplete and not rep.completed
    assert all("forced" in r["error"] for r in rep.folds)
    assert rep.to_dict()["mape"] == {"mean": None, "std": None}


def test_nested_cv_hygiene(monkeypatch):
    # the first feature is the row id, so every split can be traced back to rows
    base = generate_synthetic(SyntheticSpec(n=60, d=2, group_effect=1.0, seed=4))
    X = base.X.copy()
    X[:, 0] = np.arange(60)
    data = selection.Dataset(X, base.s, base.y)
    calls = []
    real_inner, real_eval = selection.inner_select, selection.evaluate_path

    def spy_inner(train, *a, **k):
        calls.append(("inner", set(train.data.X[:, 0].astype(int))))
        return real_inner(train, *a, **k)

    def spy_eval(train_b, test_b, *a, **k):
        calls.append(("eval", set(train_b.data.X[:, 0].astype(int)), set(test_b.data.X[:, 0].astype(int))))
        return real_eval(train_b, test_b, *a, **k)

    monkeypatch.setattr(selection, "inner_select", spy_inner)
    monkeypatch.setattr(selection, "evaluate_path", spy_eval)
    run_experiment(data, default_s_grid(data.s), small_setup(kernel="linear", folds=3, inner_folds=2))
    starts = [i for i, c in enumerate(calls) if c[0] == "inner"] + [len(calls)]
    assert len(starts) == 4
    for a, b in zip(starts, starts[1:]):
        outer_train = calls[a][1]
        *inner, outer = calls[a + 1:b]
        assert outer[1] == outer_train and not outer[2] & outer_train
        for _, tr, va in inner:
            assert (tr | va) <= outer_train


def test_fair_run_reduces_dgf_end_to_end():
    data = generate_synthetic(SyntheticSpec(n=2000, group_effect=2.0, seed=0))
    s_grid = default_s_grid(data.s)
    held = generate_synthetic(SyntheticSpec(n=5000, group_effect=2.0, seed=99))
    train_b, test_b = bin_train_test(data, held, s_grid, 10, False)
    spec = KernelSpec("gaussian", 0.1)
    free = evaluate_path(train_b, test_b, spec, [1.0], SolverConfig())[0]
    fair = evaluate_path(train_b, test_b, spec, [1.0], SolverConfig(epsilon_hat=0.0))[0]
    assert fair["dgf"] < free["dgf"]


def test_null_effect_unconstrained_dgf_small():
    # evaluated on a large independent draw so bin-level sampling noise stays below the threshold
    data = generate_synthetic(SyntheticSpec(n=2000, group_effect=0.0, seed=0))
    held = generate_synthetic(SyntheticSpec(n=20000, group_effect=0.0, seed=1000))
    train_b, test_b = bin_train_test(data, held, default_s_grid(data.s), 10, False)
    row = evaluate_path(train_b, test_b, KernelSpec("gaussian", 0.1), [0.1], SolverConfig())[0]
    assert row["dgf"] < 0.05


def test_setup_fingerprint_stable():
    a, b = small_setup(), small_setup()
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != small_setup(K=5).fingerprint()
