"""Shared builders for the test suite."""

import numpy as np

from gferm.grid import Dataset, assign_bins, categorical_grid, make_grid
from gferm.kernels import KernelSpec, build_constraints


def binned_from(X, s, y, y_cuts, s_cuts, include_s=False, clamp_labels=False):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    data = Dataset(X, s, y)
    return assign_bins(data, make_grid(cut_points=y_cuts, strategy="explicit"),
                       make_grid(cut_points=s_cuts, strategy="explicit"), include_s, clamp_labels)


def toy_problem(rng, n=None, d=None, Q=None, K=None):
    """Random small binned regression problem with at least one constraint column."""
    while True:
        n_ = n or int(rng.integers(8, 16))
        d_ = d or int(rng.integers(1, 5))
        Q_ = Q or int(rng.integers(2, 4))
        K_ = K or int(rng.integers(1, 4))
        X = rng.normal(size=(n_, d_))
        s = rng.integers(0, Q_, n_).astype(float)
        y = X @ rng.normal(size=d_) + 0.5 * s + 0.3 * rng.normal(size=n_)
        data = Dataset(X, s, y)
        binned = assign_bins(data, make_grid(y, K_, "uniform"), categorical_grid(Q_))
        try:
            build_constraints(binned, KernelSpec("linear"))
        except ValueError:
            continue
        return binned
