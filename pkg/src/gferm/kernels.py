"""Kernels, Gram matrices and the fairness constraint system.

The fairness constraint bounds the differences between the mean prediction of
sensitive groups inside each label bin. For a model ``w = sum_i alpha_i
phi(z_i)`` the difference for label bin ``k`` and groups ``p < q`` is

    <w, u_kp - u_kq> = (M^T K alpha)_c,

where ``u_kq`` is the mean feature vector of cell ``(k, q)`` and column ``c``
of ``M`` holds ``+1/n_kp`` on the rows of cell ``(k, p)`` and ``-1/n_kq`` on
the rows of cell ``(k, q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BinnedDataset


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "gaussian" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError(f"gaussian kernel needs gamma > 0, got {self.gamma}")

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}


def gram(points_a, points_b, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix ``G[i, j] = k(a_i, b_j)``."""
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("kernel inputs must be finite")
    inner = a @ b.T
    if spec.kind == "linear":
        return inner
    sq = np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :] - 2.0 * inner
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.gamma * sq)


@dataclass(frozen=True)
class ConstraintSystem:
    """Fairness constraint columns, one per label bin and sensitive pair ``p < q``.

    Attributes
    ----------
    M : ndarray, shape (n, C)
        Representer form; constraint values are ``M.T @ K @ alpha``.
    pair_index : list of (k, p, q)
        Identity of each column.
    A : ndarray, shape (d, C), optional
        Primal form ``u_kp - u_kq`` for the linear kernel; values are ``A.T @ w``.
    dropped : list of (k, p, q)
        Pairs skipped because one of the two cells is empty.
    """

    M: np.ndarray
    pair_index: list
    A: np.ndarray | None = None
    dropped: list = field(default_factory=list)

    @property
    def n_constraints(self) -> int:
        return self.M.shape[1]

    @property
    def mode(self) -> str:
        return "primal" if self.A is not None else "representer"


def build_constraints(binned: BinnedDataset, spec: KernelSpec) -> ConstraintSystem:
    n, counts = len(binned), binned.counts
    columns, pairs, dropped = [], [], []
    for k in range(binned.K):
        for p in range(binned.Q):
            for q in range(p + 1, binned.Q):
                if counts[k, p] == 0 or counts[k, q] == 0:
                    dropped.append((k, p, q))
                    continue
                col = np.zeros(n)
                col[binned.cells[(k, p)]] = 1.0 / counts[k, p]
                col[binned.cells[(k, q)]] = -1.0 / counts[k, q]
                columns.append(col)
                pairs.append((k, p, q))
    if not columns:
        raise ValueError("no label bin has two non-empty sensitive cells; use a coarser grid")
    M = np.column_stack(columns)
    A = binned.inputs().T @ M if spec.kind == "linear" else None
    return ConstraintSystem(M, pairs, A, dropped)


def constraint_values(coef, system: ConstraintSystem, gram_matrix=None) -> np.ndarray:
    """Per-column mean-prediction differences.

    With ``gram_matrix`` the coefficients are representer weights ``alpha``
    and the result is ``M^T K alpha``; without it they are primal weights
    ``w`` and the result is ``A^T w``.
    """
    coef = np.asarray(coef, dtype=float).ravel()
    if gram_matrix is not None:
        if gram_matrix.shape != (system.M.shape[0], coef.size):
            raise ValueError(f"gram {gram_matrix.shape} does not match {coef.size} coefficients")
        return system.M.T @ (gram_matrix @ coef)
    if system.A is None:
        raise ValueError("primal constraint values need a linear-kernel system")
    if system.A.shape[0] != coef.size:
        raise ValueError(f"weights of size {coef.size} for {system.A.shape[0]} features")
    return system.A.T @ coef


def null_space_projector(system: ConstraintSystem) -> np.ndarray:
    """Orthogonal projector onto the complement of the span of ``A``'s columns."""
    if system.A is None:
        raise ValueError("null-space projection needs a linear-kernel system")
    A = system.A
    if not np.all(np.isfinite(A)):
        raise ValueError("constraint matrix has non-finite entries")
    d = A.shape[0]
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.eye(d)
    rank = int(np.sum(sv > max(A.shape) * np.finfo(float).eps * sv[0]))
    basis = U[:, :rank]
    return np.eye(d) - basis @ basis.T


def null_space_features(features, system: ConstraintSystem) -> np.ndarray:
    """Project features so every linear model on them has ``A^T w = 0``."""
    return np.atleast_2d(np.asarray(features, dtype=float)) @ null_space_projector(system)
