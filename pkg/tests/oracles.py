"""Independent reference solvers for the constrained kernel problem.

All of them work in explicit feature coordinates ``Phi`` with ``K = Phi Phi^T``,
so ``w = Phi^T alpha`` and the problem reads

    min_w ||y - Phi w||^2 + lam ||w||^2   s.t.   ||B^T w||_1 <= r,   B = Phi^T M.
"""

import numpy as np


def feature_map(K):
    w, U = np.linalg.eigh(K)
    keep = w > 1e-12 * max(w.max(), 1.0)
    return U[:, keep] * np.sqrt(w[keep])


def primal_value(Phi, y, lam, w):
    return float(np.sum((y - Phi @ w) ** 2) + lam * w @ w)


def l1_ball_bisection(v, r, iters=200):
    """Projection onto the l1 ball by bisection on the soft threshold."""
    a = np.abs(v)
    if a.sum() <= r:
        return v.copy()
    lo, hi = 0.0, float(a.max())
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid, 0.0).sum() > r:
            lo = mid
        else:
            hi = mid
    return np.sign(v) * np.maximum(a - hi, 0.0)


def fista_dual(K, y, M, lam, r, iters=200_000, tol=1e-11):
    """Accelerated proximal gradient on the multiplier dual.

    The dual of the problem above is ``max_mu  y^T y - q(mu) - r ||mu||_inf``
    with ``q(mu) = (g - B mu / 2)^T H^{-1} (g - B mu / 2)``, ``g = Phi^T y`` and
    ``H = Phi^T Phi + lam I``. Any ``mu`` gives a lower bound on the optimum; the
    rescaled primal point ``w(mu)`` gives an upper bound.

    Returns ``(lower, upper)``.
    """
    Phi = feature_map(K)
    B = Phi.T @ M
    H = Phi.T @ Phi + lam * np.eye(Phi.shape[1])
    Hinv = np.linalg.inv(H)
    g = Phi.T @ y
    L = 0.5 * np.linalg.eigvalsh(B.T @ Hinv @ B).max() + 1e-300

    def grad(mu):
        return -B.T @ (Hinv @ (g - 0.5 * B @ mu))

    def dual(mu):
        v = g - 0.5 * B @ mu
        return float(y @ y - v @ Hinv @ v - r * np.max(np.abs(mu)))

    def upper(mu):
        w = Hinv @ (g - 0.5 * B @ mu)
        norm = np.sum(np.abs(B.T @ w))
        if norm > r:
            w = w * (r / norm)
        return primal_value(Phi, y, lam, w)

    mu = np.zeros(M.shape[1])
    z, t = mu.copy(), 1.0
    step = 1.0 / L
    for it in range(iters):
        x = z - step * grad(z)
        mu_new = x - l1_ball_bisection(x, step * r)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = mu_new + ((t - 1.0) / t_new) * (mu_new - mu)
        mu, t = mu_new, t_new
        if it % 200 == 0 and upper(mu) - dual(mu) < tol * max(1.0, abs(dual(mu))):
            break
    return dual(mu), upper(mu)


def kkt_equality(K, y, M, lam):
    """Direct solve of the stationarity system for ``M^T K alpha = 0``.

    ``[2(K K + lam K), K M; M^T K, 0] [alpha; nu] = [2 K y; 0]``.
    """
    n, C = M.shape
    top = np.hstack([2.0 * (K @ K + lam * K), K @ M])
    bottom = np.hstack([M.T @ K, np.zeros((C, C))])
    rhs = np.concatenate([2.0 * K @ y, np.zeros(C)])
    # lstsq: repeated constraint rows make the multiplier block singular
    sol = np.linalg.lstsq(np.vstack([top, bottom]), rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def cvxpy_value(K, y, M, lam, r, loss="squared"):
    """Conic reference value, or ``None`` when cvxpy is unavailable."""
    try:
        import cvxpy as cp
    except ImportError:
        return None
    Phi = feature_map(K)
    B = Phi.T @ M
    w = cp.Variable(Phi.shape[1])
    f = Phi @ w
    data = cp.sum_squares(y - f) if loss == "squared" else cp.sum(cp.pos(1 - cp.multiply(y, f)))
    cons = [cp.norm1(B.T @ w) <= r] if np.isfinite(r) else []
    prob = cp.Problem(cp.Minimize(data + lam * cp.sum_squares(w)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return float(prob.value)
