"""Kernel ridge / hinge estimators under the l1 fairness constraint.

The problem solved is

    min_alpha  sum_i loss(y_i, (K alpha)_i) + lam * alpha^T K alpha
    s.t.       sum_k sum_{p,q} |<w, u_kp - u_kq>| <= epsilon_hat

with the sum running over ordered sensitive pairs. The constraint system
stores only ``p < q`` columns, so the l1 ball on ``M^T K alpha`` has radius
``epsilon_hat / 2``.

Squared loss
    Every optimum can be written ``alpha = (K + lam I)^{-1} (y - M mu)`` for a
    multiplier ``mu`` with one entry per constraint column. The constraint
    values are then ``c = s - S mu`` with ``S = M^T K (K + lam I)^{-1} M`` and
    ``s = M^T K (K + lam I)^{-1} y``, and the objective is ``F0 + mu^T S mu``.
    ADMM on the split ``c = v``, ``||v||_1 <= r`` therefore runs entirely in the
    constraint space after one factorization of ``K + lam I``. With
    ``epsilon_hat = 0`` the multiplier solves ``S mu = s`` directly.

Hinge loss
    ADMM over ``alpha`` with splits ``z = K alpha`` (hinge prox) and
    ``v = M^T K alpha`` (l1-ball projection).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .grid import BinnedDataset
from .kernels import ConstraintSystem, KernelSpec, build_constraints, gram

FEASIBILITY_SLACK = 1e-6
ABS_TOL = 1e-9


class SolverError(RuntimeError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``lam`` is the Tikhonov weight, ``epsilon_hat`` the bound on the
    ordered-pair sum of mean-prediction gaps (``math.inf`` for no constraint).
    ``centered`` fits on ``y - mean(y)`` and adds the mean back as intercept.
    """

    loss: str = "squared"
    lam: float = 1.0
    epsilon_hat: float = math.inf
    rho: float = 1.0
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    max_iter: int = 20000
    seed: int = 0
    centered: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.loss not in ("squared", "hinge"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.epsilon_hat >= 0:
            raise ValueError(f"epsilon_hat must be >= 0, got {self.epsilon_hat}")
        if not (self.tol_primal > 0 and self.tol_dual > 0 and self.rho > 0):
            raise ValueError("tolerances and rho must be positive")

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.epsilon_hat)


@dataclass
class FairModel:
    alpha: np.ndarray
    kernel: KernelSpec
    training_inputs: np.ndarray
    intercept: float = 0.0
    constraint_system: ConstraintSystem | None = None
    diagnostics: dict = field(default_factory=dict)

    def predict(self, inputs) -> np.ndarray:
        return predict(self, inputs)


def predict(model: FairModel, inputs) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(inputs, dtype=float))
    if Z.shape[1] != model.training_inputs.shape[1]:
        raise ValueError(f"inputs have {Z.shape[1]} features, model expects "
                         f"{model.training_inputs.shape[1]}")
    return gram(Z, model.training_inputs, model.kernel) @ model.alpha + model.intercept


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{u : ||u||_1 <= radius}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    mu = np.sort(a.ravel())[::-1]
    cums = np.cumsum(mu) - radius
    j = np.arange(1, mu.size + 1)
    active = np.flatnonzero(mu - cums / j > 0)
    # the first entry always qualifies in exact arithmetic; cancellation can hide it
    rho = active[-1] if active.size else 0
    theta = cums[rho] / (rho + 1)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def fairness_l1(values) -> float:
    """Ordered-pair sum of ``|gap|`` for ``p < q`` constraint values."""
    return 2.0 * float(np.sum(np.abs(values)))


def objective(model: FairModel, binned: BinnedDataset, config: SolverConfig) -> float:
    """``sum_i loss(y_i, f(z_i)) + lam * alpha^T K alpha`` on the training data."""
    Z = binned.inputs()
    K = gram(Z, Z, model.kernel)
    f = K @ model.alpha
    y = binned.y - model.intercept
    if config.loss == "squared":
        data = float(np.sum((y - f) ** 2))
    else:
        data = float(np.sum(np.maximum(0.0, 1.0 - y * f)))
    return data + config.lam * float(model.alpha @ f)


class _RidgeInverse:
    """Applies ``(K + lam I)^{-1}`` from a Cholesky or a shared eigendecomposition."""

    def __init__(self, K, lam, eig=None):
        self.lam = lam
        if eig is not None:
            w, U = eig
            self._U, self._d = U, 1.0 / (np.maximum(w, 0.0) + lam)
            self._cho = None
        else:
            A = K + lam * np.eye(K.shape[0])
            try:
                self._cho = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                bump = 1e-10 * max(float(np.trace(A)) / A.shape[0], 1.0)
                try:
                    self._cho = scipy.linalg.cho_factor(A + bump * np.eye(A.shape[0]), lower=True,
                                                        check_finite=False)
                except np.linalg.LinAlgError as exc:
                    raise SolverError("K + lam I is not positive definite") from exc

    def __call__(self, B):
        if self._cho is not None:
            return scipy.linalg.cho_solve(self._cho, B, check_finite=False)
        Ut = self._U.T @ B
        scale = self._d if Ut.ndim == 1 else self._d[:, None]
        return self._U @ (scale * Ut)


def _admm_multiplier(S, s_y, radius, config, f0=0.0):
    """ADMM for the multiplier when ``0 < radius < inf``.

    Iterates ``c`` (constraint values reached by the ridge step), ``v`` (its
    copy in the l1 ball) and the scaled dual ``u``. Returns ``mu`` and
    diagnostics; with ``config.trace`` the diagnostics hold the objective
    ``f0 + mu^T S mu`` and constraint norm of every iterate.
    """
    C = s_y.size
    sig, V = np.linalg.eigh(S)
    sig = np.maximum(sig, 0.0)
    mean_sig = float(np.mean(sig))
    rho = config.rho * (2.0 / mean_sig if mean_sig > 0 else 1.0)
    SV = S @ V

    def c_step(v, u, rho):
        rhs = V.T @ s_y + 0.5 * rho * (SV.T @ (v - u))
        return V @ (rhs / (1.0 + 0.5 * rho * sig))

    v = project_l1_ball(s_y, radius)
    u = np.zeros(C)
    trace = []
    converged = False
    r_norm = s_norm = math.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        c = c_step(v, u, rho)
        mu = 0.5 * rho * (c - v + u)
        v_old = v
        v = project_l1_ball(c + u, radius)
        u = u + c - v
        if config.trace:
            trace.append((f0 + float(mu @ S @ mu), fairness_l1(c)))
        r_norm = float(np.linalg.norm(c - v))
        s_norm = float(rho * np.linalg.norm(v - v_old))
        eps_pri = math.sqrt(C) * ABS_TOL + config.tol_primal * max(np.linalg.norm(c), np.linalg.norm(v))
        eps_dual = math.sqrt(C) * ABS_TOL + config.tol_dual * rho * np.linalg.norm(u)
        feasible = fairness_l1(c) <= 2.0 * radius + 0.1 * FEASIBILITY_SLACK
        if r_norm <= eps_pri and s_norm <= eps_dual and feasible:
            converged = True
            break
        if it % 10 == 0:
            # residual balancing; the eigenbasis makes a new rho free
            if r_norm > 10 * s_norm:
                rho *= 2.0
                u = u / 2.0
            elif s_norm > 10 * r_norm:
                rho /= 2.0
                u = u * 2.0
    diag = {"iterations": it, "primal_residual": r_norm, "dual_residual": s_norm,
            "converged": converged, "rho": rho}
    if config.trace:
        diag["trace"] = trace
    return mu, diag


def _solve_squared(K, y, M, lam, radius, config, ridge):
    a0 = ridge(y)
    if M is None or math.isinf(radius):
        return a0, {"iterations": 0, "converged": True}
    KM = K @ M
    AM = ridge(M)
    S = KM.T @ AM
    S = 0.5 * (S + S.T)
    s_y = KM.T @ a0
    if radius == 0:
        mu, *_ = scipy.linalg.lstsq(S, s_y, check_finite=False)
        diag = {"iterations": 0, "converged": True}
    elif np.sum(np.abs(s_y)) <= radius:
        mu = np.zeros_like(s_y)
        diag = {"iterations": 0, "converged": True}
    else:
        mu, diag = _admm_multiplier(S, s_y, radius, config, float(y @ y - y @ (K @ a0)))
    if not np.all(np.isfinite(mu)):
        raise SolverError("non-finite multipliers")
    diag["multipliers"] = mu
    return a0 - AM @ mu, diag


def _hinge_prox(t, y, step):
    """Prox of ``step * max(0, 1 - y z)`` at ``t`` for labels ``y`` in {-1, +1}."""
    m = y * t
    m_new = np.where(m > 1.0, m, np.where(m < 1.0 - step, m + step, 1.0))
    return y * m_new


def _solve_hinge(K, y, M, lam, radius, config):
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("hinge loss needs labels in {-1, +1}")
    n = K.shape[0]
    has_c = M is not None and math.isfinite(radius)
    if has_c:
        P_inv = np.eye(n) - M @ np.linalg.solve(np.eye(M.shape[1]) + M.T @ M, M.T)
    else:
        P_inv = np.eye(n)
    rho = config.rho

    def factor(rho):
        tau = 2.0 * lam / rho
        try:
            return scipy.linalg.cho_factor(K + tau * P_inv, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError("hinge ADMM system is not positive definite") from exc

    cho = factor(rho)
    alpha = np.zeros(n)
    z = np.zeros(n)
    u1 = np.zeros(n)
    v = np.zeros(M.shape[1]) if has_c else None
    u2 = np.zeros(M.shape[1]) if has_c else None
    converged = False
    r_norm = s_norm = math.inf
    refactors = 0
    it = 0
    for it in range(1, config.max_iter + 1):
        rhs = z - u1
        if has_c:
            rhs = rhs + M @ (v - u2)
        alpha = scipy.linalg.cho_solve(cho, P_inv @ rhs, check_finite=False)
        f = K @ alpha
        z_old = z
        z = _hinge_prox(f + u1, y, 1.0 / rho)
        u1 = u1 + f - z
        r_sq = float(np.sum((f - z) ** 2))
        s_sq = float(np.sum((z - z_old) ** 2))
        scale_pri = float(np.sum(f ** 2))
        scale_dual = float(np.sum(u1 ** 2))
        if has_c:
            c = M.T @ f
            v_old = v
            v = project_l1_ball(c + u2, radius)
            u2 = u2 + c - v
            r_sq += float(np.sum((c - v) ** 2))
            s_sq += float(np.sum((v - v_old) ** 2))
            scale_pri += float(np.sum(c ** 2))
            scale_dual += float(np.sum(u2 ** 2))
        r_norm, s_norm = math.sqrt(r_sq), rho * math.sqrt(s_sq)
        dim = math.sqrt(n + (M.shape[1] if has_c else 0))
        feasible = not has_c or fairness_l1(c) <= 2.0 * radius + 0.1 * FEASIBILITY_SLACK
        if (feasible and r_norm <= dim * ABS_TOL + config.tol_primal * math.sqrt(scale_pri)
                and s_norm <= dim * ABS_TOL + config.tol_dual * rho * math.sqrt(scale_dual)):
            converged = True
            break
        if it % 50 == 0 and refactors < 20 and (r_norm > 10 * s_norm or s_norm > 10 * r_norm):
            factor_change = 2.0 if r_norm > 10 * s_norm else 0.5
            rho *= factor_change
            u1 = u1 / factor_change
            if has_c:
                u2 = u2 / factor_change
            cho = factor(rho)
            refactors += 1
    return alpha, {"iterations": it, "primal_residual": r_norm, "dual_residual": s_norm,
                   "converged": converged, "rho": rho}


def _finish(alpha, K, M, config, diag, kernel, Z, intercept, system):
    if not np.all(np.isfinite(alpha)):
        raise SolverError("non-finite coefficients")
    f = K @ alpha
    y_fit = diag.pop("_y")
    if config.loss == "squared":
        data = float(np.sum((y_fit - f) ** 2))
    else:
        data = float(np.sum(np.maximum(0.0, 1.0 - y_fit * f)))
    diag["objective"] = data + config.lam * float(alpha @ f)
    if M is not None:
        values = M.T @ f
        diag["constraint_values"] = values
        diag["constraint_l1_norm"] = fairness_l1(values)
        diag["feasible"] = (not config.constrained
                            or diag["constraint_l1_norm"] <= config.epsilon_hat + FEASIBILITY_SLACK)
    if not diag.get("converged", True):
        warnings.warn(f"solver stopped after {diag['iterations']} iterations without converging",
                      ConvergenceWarning, stacklevel=3)
    return FairModel(alpha, kernel, Z, intercept, system, diag)


def _diag_matrix(system):
    # constraint values are reported whenever a system is known, even unconstrained
    return None if system is None else system.M


def _prepare(binned, kernel, system, config):
    Z = binned.inputs()
    y = binned.y.astype(float)
    intercept = float(np.mean(y)) if config.centered else 0.0
    if config.constrained and system is None:
        system = build_constraints(binned, kernel)
    return Z, y - intercept, intercept, system


def fit(binned: BinnedDataset, kernel: KernelSpec, system: ConstraintSystem | None = None,
        config: SolverConfig | None = None) -> FairModel:
    """Fit the fairness-constrained kernel model on ``binned``.

    The constraint system is built from ``binned`` when not given and the
    constraint is finite. Diagnostics record iterations, residuals, the
    objective and the reached constraint norm.
    """
    config = config or SolverConfig()
    Z, y, intercept, system = _prepare(binned, kernel, system, config)
    K = gram(Z, Z, kernel)
    M = system.M if (system is not None and config.constrained) else None
    radius = config.epsilon_hat / 2.0
    if config.loss == "squared":
        alpha, diag = _solve_squared(K, y, M, config.lam, radius, config,
                                     _RidgeInverse(K, config.lam))
    else:
        alpha, diag = _solve_hinge(K, y, M, config.lam, radius, config)
    diag["_y"] = y
    return _finish(alpha, K, _diag_matrix(system), config, diag, kernel, Z, intercept, system)


def fit_path(binned: BinnedDataset, kernel: KernelSpec, lambdas, config: SolverConfig | None = None,
             system: ConstraintSystem | None = None, gram_matrix=None, eig=None) -> list[FairModel]:
    """Squared-loss fits for several ``lam`` values sharing one eigendecomposition of K."""
    config = config or SolverConfig()
    if config.loss != "squared":
        return [fit(binned, kernel, system, replace(config, lam=float(lam))) for lam in lambdas]
    Z, y, intercept, system = _prepare(binned, kernel, system, config)
    K = gram(Z, Z, kernel) if gram_matrix is None else gram_matrix
    if eig is None:
        eig = np.linalg.eigh(K)
    M = system.M if (system is not None and config.constrained) else None
    models = []
    for lam in lambdas:
        cfg = replace(config, lam=float(lam))
        alpha, diag = _solve_squared(K, y, M, cfg.lam, cfg.epsilon_hat / 2.0, cfg,
                                     _RidgeInverse(K, cfg.lam, eig=eig))
        diag["_y"] = y
        models.append(_finish(alpha, K, _diag_matrix(system), cfg, diag, kernel, Z, intercept, system))
    return models
