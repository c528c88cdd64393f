"""Chambolle-Pock primal-dual reference solver for the smoothed analysis
problem. It shares no code with the ACF iteration and serves as its oracle.

Splitting: ``G(x) = mu/2 ||x - x0||^2`` and ``F(Kx)`` with ``K = [W; A]``,
``F(p, q) = ||p||_1 + indicator(q in y + eps * Ball)``.
"""

from typing import NamedTuple

import numpy as np


class PrimalDualResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _project_ball(q, center, radius, ball):
    d = q - center
    if ball == "l2":
        nrm = np.linalg.norm(d)
        if nrm > radius:
            d = d * (radius / nrm)
        return center + d
    if ball == "linf":
        return center + np.clip(d, -radius, radius)
    raise ValueError(f"unknown ball {ball!r}")


def solve_smoothed_analysis(A, W, y, mu, eps=0.0, x0=None, tol=1e-10, max_iter=2_000_000,
                            ball="l2"):
    """Minimise ``||W x||_1 + mu/2 ||x - x0||^2`` subject to ``||y - A x|| <= eps``.

    ``ball="linf"`` switches the data constraint to the max-norm. The loop stops
    once the scaled fixed-point residual of the primal-dual map falls below
    ``tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = A.T @ y if x0 is None else np.asarray(x0, dtype=np.float64)
    N = W.shape[0]
    K = np.vstack([W, A])
    Lk = np.linalg.norm(K, 2)
    # strongly convex G tolerates a larger primal step
    tau = 1.0 / Lk
    sigma = 0.99 / (tau * Lk ** 2)
    x = x0.copy()
    xbar = x.copy()
    xi = np.zeros(K.shape[0])
    scale = max(1.0, np.linalg.norm(x0))
    res = np.inf
    for it in range(1, max_iter + 1):
        v = xi + sigma * (K @ xbar)
        p = np.clip(v[:N], -1.0, 1.0)
        q = v[N:] - sigma * _project_ball(v[N:] / sigma, y, eps, ball)
        xi_new = np.concatenate([p, q])
        x_new = (x - tau * (K.T @ xi_new) + tau * mu * x0) / (1.0 + tau * mu)
        xbar = 2.0 * x_new - x
        res = max(np.linalg.norm(x_new - x) / tau, np.linalg.norm(xi_new - xi) / sigma) / scale
        x, xi = x_new, xi_new
        if res <= tol:
            return PrimalDualResult(x, it, float(res), True)
    return PrimalDualResult(x, max_iter, float(res), False)
