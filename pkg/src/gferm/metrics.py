"""Fairness and error measures on binned data.

Tables are ``K x Q`` arrays indexed by (label bin, sensitive bin). Cells with
no rows are undefined and masked out of every sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import BinnedDataset

NORMALIZATIONS = ("KQ2", "KQ(Q-1)")


@dataclass(frozen=True)
class ConditionalTable:
    values: np.ndarray
    defined: np.ndarray
    kind: str = "probability"

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class LossSpec:
    """Per-cell loss. ``id`` is one of ``zero-one-bin``, ``linear``,
    ``squared``, ``hinge`` or ``absolute-percentage``."""

    id: str

    def __call__(self, pred, y, k=None, y_grid=None, clamp=True):
        pred = np.asarray(pred, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.id == "zero-one-bin":
            if k is None or y_grid is None:
                raise ValueError("zero-one-bin loss needs the bin index and grid")
            return (y_grid.bin(pred, clamp=clamp) != k).astype(float)
        if self.id == "linear":
            return pred - y
        if self.id == "squared":
            return (pred - y) ** 2
        if self.id == "hinge":
            if not np.all(np.isin(y, (-1.0, 1.0))):
                raise ValueError("hinge loss needs labels in {-1, +1}")
            return np.maximum(0.0, 1.0 - y * pred)
        if self.id == "absolute-percentage":
            if np.any(y == 0):
                raise ValueError("absolute-percentage loss undefined for zero targets")
            return 100.0 * np.abs(y - pred) / np.abs(y)
        raise ValueError(f"unknown loss {self.id!r}")


ZERO_ONE_BIN = LossSpec("zero-one-bin")
LINEAR = LossSpec("linear")


def _check_aligned(predictions, binned):
    pred = np.asarray(predictions, dtype=float).ravel()
    if pred.size != len(binned):
        raise ValueError(f"{pred.size} predictions for {len(binned)} samples")
    return pred


def conditional_probabilities(predictions, binned: BinnedDataset,
                              clamp: bool = True) -> ConditionalTable:
    """Fraction of each cell ``(k, q)`` whose prediction lands in label bin ``k``."""
    pred = _check_aligned(predictions, binned)
    pred_bin = binned.y_grid.bin(pred, clamp=clamp)
    values = np.zeros(binned.counts.shape)
    for (k, q), idx in binned.cells.items():
        if idx.size:
            values[k, q] = np.mean(pred_bin[idx] == k)
    return ConditionalTable(values, binned.counts > 0, "probability")


def conditional_risks(predictions, binned: BinnedDataset, loss, clamp: bool = True) -> ConditionalTable:
    """Mean loss over each cell.

    ``loss`` is a single :class:`LossSpec` or a sequence of ``K`` of them, one
    per label bin.
    """
    pred = _check_aligned(predictions, binned)
    losses = [loss] * binned.K if isinstance(loss, LossSpec) else list(loss)
    if len(losses) != binned.K:
        raise ValueError(f"need {binned.K} per-bin losses, got {len(losses)}")
    values = np.zeros(binned.counts.shape)
    y = binned.y
    for (k, q), idx in binned.cells.items():
        if idx.size:
            values[k, q] = np.mean(losses[k](pred[idx], y[idx], k, binned.y_grid, clamp))
    kind = "loss-risk(" + ",".join(sorted({l.id for l in losses})) + ")"
    return ConditionalTable(values, binned.counts > 0, kind)


def _pair_sums(table: ConditionalTable):
    """Per-row sum of ``|v_p - v_q|`` over ordered defined pairs, and defined counts."""
    v, m = table.values, table.defined
    sums = np.zeros(v.shape[0])
    for k in range(v.shape[0]):
        row = v[k, m[k]]
        sums[k] = np.abs(row[:, None] - row[None, :]).sum()
    return sums, m.sum(axis=1)


def gap_normalizer(defined, normalization: str = "KQ2") -> float:
    """Number of terms the normalized gap divides by, for a definedness mask.

    Only rows with at least two defined cells count: ``sum_k d_k**2`` for
    ``KQ2`` and ``sum_k d_k (d_k - 1)`` for ``KQ(Q-1)``, ``d_k`` being the
    defined cells of row ``k``. With every cell defined these are ``K Q^2``
    and ``K Q (Q - 1)``. Zero when no row qualifies.
    """
    d = np.asarray(defined).sum(axis=1)
    d = d[d >= 2]
    if normalization == "KQ2":
        return float(np.sum(d ** 2))
    if normalization == "KQ(Q-1)":
        return float(np.sum(d * (d - 1)))
    raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


def pairwise_gap_sum(table: ConditionalTable, normalize: bool = False,
                     normalization: str = "KQ2") -> float:
    """Sum over rows of all ordered-pair absolute differences between columns.

    Unnormalized, this is the DGF of a probability table; ``normalize``
    divides by :func:`gap_normalizer`.
    """
    sums, _ = _pair_sums(table)
    denom = gap_normalizer(table.defined, normalization)
    if denom == 0:
        warnings.warn("no row has two defined cells; gap sum is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    total = float(sums.sum())
    return total / denom if normalize else total


def dgf(predictions, binned: BinnedDataset, normalize: bool = False,
        normalization: str = "KQ2", clamp: bool = True) -> float:
    table = conditional_probabilities(predictions, binned, clamp=clamp)
    return pairwise_gap_sum(table, normalize, normalization)


def lgf(predictions, binned: BinnedDataset, losses, epsilon: float,
        normalization: str = "KQ2") -> dict:
    """Normalized gap of the conditional risks, and whether it is within ``epsilon``."""
    table = conditional_risks(predictions, binned, losses)
    value = pairwise_gap_sum(table, normalize=True, normalization=normalization)
    return {"value": value, "is_fair": bool(value <= epsilon)}


def mape(predictions, targets) -> float:
    pred = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if pred.size != y.size:
        raise ValueError(f"{pred.size} predictions for {y.size} targets")
    if np.any(y == 0):
        raise ValueError("MAPE is undefined for zero targets")
    return float(np.mean(100.0 * np.abs(y - pred) / np.abs(y)))


def delta_hat(predictions, binned: BinnedDataset, normalization: str = "KQ2",
              clamp: bool = True) -> dict:
    """Gap between the indicator-based fairness sum and its linear-loss relaxation.

    Returns the raw signed sum ``sum |P_p - P_q| - |L_p - L_q|`` over ordered
    defined pairs and the same divided by the normalizer of
    :func:`pairwise_gap_sum`.
    """
    p_table = conditional_probabilities(predictions, binned, clamp=clamp)
    l_table = conditional_risks(predictions, binned, LINEAR)
    raw = pairwise_gap_sum(p_table) - pairwise_gap_sum(l_table)
    denom = gap_normalizer(p_table.defined, normalization)
    return {"raw": raw, "normalized": raw / denom if denom else 0.0}
