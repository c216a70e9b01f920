"""Discretization grids and the partition of a dataset into label/sensitive cells.

A grid is an increasing sequence of cut points ``c_0 < c_1 < ... < c_B``
defining ``B`` half-open bins ``[c_j, c_{j+1})``. Bins are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# relative pad on the top cut point of a uniform grid so the maximum is binned
UNIFORM_PAD = 1e-9


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscretizationGrid:
    """Ordered cut points defining half-open bins.

    Parameters
    ----------
    cut_points : array_like
        Strictly increasing, at least two entries.
    """

    cut_points: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cut_points, dtype=float).ravel()
        if cuts.size < 2:
            raise GridError("a grid needs at least two cut points")
        if not np.all(np.isfinite(cuts)):
            raise GridError("cut points must be finite")
        if np.any(np.diff(cuts) <= 0):
            raise GridError(f"cut points must be strictly increasing, got {cuts.tolist()}")
        cuts.setflags(write=False)
        object.__setattr__(self, "cut_points", cuts)

    @property
    def n_bins(self) -> int:
        return self.cut_points.size - 1

    def bin(self, values, clamp: bool = False) -> np.ndarray:
        """Bin index of each value, ``-1`` when out of range.

        With ``clamp`` set, values below the grid go to bin 0 and values at or
        above the top cut point go to the last bin.
        """
        v = np.asarray(values, dtype=float)
        idx = np.searchsorted(self.cut_points, v, side="right") - 1
        if clamp:
            return np.clip(idx, 0, self.n_bins - 1)
        out = (idx < 0) | (idx >= self.n_bins)
        return np.where(out, -1, idx)

    def to_list(self) -> list[float]:
        return [float(c) for c in self.cut_points]

    def __eq__(self, other):
        if not isinstance(other, DiscretizationGrid):
            return NotImplemented
        return np.array_equal(self.cut_points, other.cut_points)

    def __hash__(self):
        return hash(self.cut_points.tobytes())


def make_grid(values=None, bins: int = 1, strategy: str = "uniform",
              cut_points=None) -> DiscretizationGrid:
    """Build a grid from data or from explicit cut points.

    Parameters
    ----------
    values : array_like, optional
        Data the grid should cover (``uniform`` and ``quantile``).
    bins : int
        Number of bins requested.
    strategy : {'uniform', 'quantile', 'explicit'}
        ``uniform`` spaces cut points evenly over ``[min, max]`` and pads the
        top one so the maximum falls in the last bin. ``quantile`` places them
        at empirical quantiles. ``explicit`` validates ``cut_points``.
    """
    if strategy == "explicit":
        if cut_points is None:
            raise GridError("explicit strategy needs cut_points")
        return DiscretizationGrid(np.asarray(cut_points, dtype=float))
    if bins < 1:
        raise GridError(f"bins must be >= 1, got {bins}")
    if values is None:
        raise GridError(f"{strategy} strategy needs values")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise GridError(f"{strategy} strategy needs non-empty values")
    lo, hi = float(v.min()), float(v.max())
    if strategy == "uniform":
        span = hi - lo
        if span == 0:
            span = max(abs(hi), 1.0)
        cuts = lo + span * np.arange(bins + 1) / bins
        cuts[-1] = lo + span + UNIFORM_PAD * span
        return DiscretizationGrid(cuts)
    if strategy == "quantile":
        q = np.quantile(v, np.linspace(0.0, 1.0, bins + 1))
        q[-1] = hi + UNIFORM_PAD * max(hi - lo, 1.0)
        cuts = np.unique(q)
        if cuts.size - 1 < bins:
            raise GridError(f"quantile grid collapsed from {bins} to {cuts.size - 1} bins: "
                            f"duplicate quantiles {q.tolist()}")
        return DiscretizationGrid(cuts)
    raise GridError(f"unknown strategy {strategy!r}")


def categorical_grid(n_categories: int) -> DiscretizationGrid:
    """Separator grid ``{-0.5, 0.5, ..., n - 0.5}`` for codes ``0..n-1``."""
    return DiscretizationGrid(np.arange(n_categories + 1) - 0.5)


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    s: float
    y: float


def model_input(sample: Sample, include_s_in_model: bool) -> np.ndarray:
    x = np.asarray(sample.x, dtype=float).ravel()
    if include_s_in_model:
        return np.append(x, float(sample.s))
    return x.copy()


@dataclass(frozen=True)
class Dataset:
    """Rows ``(x_i, s_i, y_i)`` stored as arrays."""

    X: np.ndarray
    s: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        s = np.asarray(self.s, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if not (X.shape[0] == s.size == y.size):
            raise ValueError(f"row mismatch: X {X.shape}, s {s.shape}, y {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
            raise ValueError("dataset values must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("no samples")
        X = np.array([np.asarray(smp.x, dtype=float).ravel() for smp in samples])
        return cls(X, [smp.s for smp in samples], [smp.y for smp in samples])

    def __len__(self):
        return self.y.size

    def samples(self) -> list[Sample]:
        return [Sample(self.X[i], float(self.s[i]), float(self.y[i])) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.s[idx], self.y[idx], self.feature_names, dict(self.meta))

    def model_inputs(self, include_s_in_model: bool) -> np.ndarray:
        if include_s_in_model:
            return np.column_stack([self.X, self.s])
        return self.X


@dataclass(frozen=True)
class BinnedDataset:
    """A dataset partitioned into cells ``(k, q)`` of label bin by sensitive bin.

    ``cells[(k, q)]`` holds the row indices of the cell, ``counts[k, q]`` its
    size. Rows whose label or sensitive value falls outside the grids are
    listed in ``unassigned``.
    """

    data: Dataset
    y_grid: DiscretizationGrid
    s_grid: DiscretizationGrid
    cells: dict
    counts: np.ndarray
    unassigned: np.ndarray
    include_s_in_model: bool = False

    @property
    def K(self) -> int:
        return self.y_grid.n_bins

    @property
    def Q(self) -> int:
        return self.s_grid.n_bins

    @property
    def y(self) -> np.ndarray:
        return self.data.y

    def __len__(self):
        return len(self.data)

    def inputs(self) -> np.ndarray:
        return self.data.model_inputs(self.include_s_in_model)

    def cell_labels(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-row ``(k, q)`` arrays, ``-1`` for unassigned rows."""
        k = np.full(len(self), -1)
        q = np.full(len(self), -1)
        for (kk, qq), idx in self.cells.items():
            k[idx] = kk
            q[idx] = qq
        return k, q


def assign_bins(data, y_grid: DiscretizationGrid, s_grid: DiscretizationGrid,
                include_s_in_model: bool = False, clamp_labels: bool = False) -> BinnedDataset:
    """Partition ``data`` into the cells of ``y_grid`` x ``s_grid``.

    ``data`` is a :class:`Dataset` or a sequence of :class:`Sample`.
    ``clamp_labels`` pushes out-of-range labels into the end bins; it is meant
    for held-out evaluation only, never for the training cells.
    """
    if not isinstance(data, Dataset):
        data = Dataset.from_samples(data)
    if len(data) == 0:
        raise ValueError("no samples")
    k = y_grid.bin(data.y, clamp=clamp_labels)
    q = s_grid.bin(data.s)
    ok = (k >= 0) & (q >= 0)
    K, Q = y_grid.n_bins, s_grid.n_bins
    cells = {}
    counts = np.zeros((K, Q), dtype=int)
    for kk in range(K):
        for qq in range(Q):
            idx = np.flatnonzero(ok & (k == kk) & (q == qq))
            cells[(kk, qq)] = idx
            counts[kk, qq] = idx.size
    counts.setflags(write=False)
    return BinnedDataset(data, y_grid, s_grid, cells, counts, np.flatnonzero(~ok),
                         include_s_in_model)
