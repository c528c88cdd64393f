"""Analysis conic form (ACF) iteration for

    min_x ||W x||_1 + (mu / 2) ||x - x0||^2   s.t.  ||y - A x|| <= eps

Vectors may be 1-D or stacked as columns of a 2-D array; every update is
columnwise, so a batch of problems sharing ``A`` and ``W`` is solved at once.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .operators import soft_threshold, truncate
from .schedule import build_acf


class StepTrace(NamedTuple):
    """Intermediate quantities of one update, reused for backpropagation."""

    zbar1: np.ndarray
    zbar2: np.ndarray
    x: np.ndarray
    pre1: np.ndarray
    pre2: np.ndarray
    tau1: float
    tau2: float


@dataclass(frozen=True)
class AcfState:
    x: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n, N, m, batch=None):
        tail = () if batch is None else (batch,)
        return cls(np.zeros((n,) + tail), np.zeros((N,) + tail), np.zeros((m,) + tail),
                   np.zeros((N,) + tail), np.zeros((m,) + tail), 0)


@dataclass(frozen=True)
class AcfProblem:
    A: np.ndarray
    W: np.ndarray
    y: np.ndarray
    mu: float
    eps: float = 0.0
    x0: np.ndarray = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if A.ndim != 2 or W.ndim != 2 or W.shape[1] != A.shape[1]:
            raise ValueError(f"incompatible A {A.shape} and W {W.shape}")
        if y.shape[0] != A.shape[0]:
            raise ValueError(f"y has {y.shape[0]} rows, A has {A.shape[0]}")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        x0 = A.T @ y if self.x0 is None else np.asarray(self.x0, dtype=np.float64)
        if x0.shape != (A.shape[1],) + y.shape[1:]:
            raise ValueError(f"x0 has shape {x0.shape}")
        for name, val in (("A", A), ("W", W), ("y", y), ("x0", x0)):
            object.__setattr__(self, name, val)

    def objective(self, x):
        """Smoothed objective summed over columns."""
        return float(np.sum(np.abs(self.W @ x)) + 0.5 * self.mu * np.sum((x - self.x0) ** 2))

    def analysis_l1(self, x):
        return float(np.sum(np.abs(self.W @ x)))

    def residual(self, x):
        return float(np.max(np.linalg.norm(np.reshape(self.y - self.A @ x, (self.A.shape[0], -1)), axis=0)))


def primal_point(W, A, x0, z1, z2, u1, u2, theta, mu):
    """``x = x0 + mu^-1 (W^T zbar1 - A^T zbar2)`` with ``zbar = (1-theta) u + theta z``."""
    zbar1 = (1.0 - theta) * u1 + theta * z1
    zbar2 = (1.0 - theta) * u2 + theta * z2
    return x0 + (W.T @ zbar1 - A.T @ zbar2) / mu, zbar1, zbar2


def update(W, A, y, x0, z1, z2, u1, u2, t1, t2, theta, mu, eps):
    """One ACF iteration; returns ``(z1, z2, u1, u2, trace)`` for step ``k+1``."""
    x, zbar1, zbar2 = primal_point(W, A, x0, z1, z2, u1, u2, theta, mu)
    s1 = t1 / theta
    s2 = t2 / theta
    pre1 = zbar1 - s1 * (W @ x)
    pre2 = zbar2 - s2 * (y - A @ x)
    tau1, tau2 = s1, s2 * eps
    z1n = truncate(pre1, tau1)
    z2n = soft_threshold(pre2, tau2)
    u1n = (1.0 - theta) * u1 + theta * z1n
    u2n = (1.0 - theta) * u2 + theta * z2n
    return z1n, z2n, u1n, u2n, StepTrace(zbar1, zbar2, x, pre1, pre2, tau1, tau2)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite ACF iterate")


def acf_step(state, prob, t1, t2, theta):
    """Advance ``state`` by one iteration using multiplier ``theta = theta_k``.

    The returned state carries ``x_k``, the primal point evaluated from the
    incoming dual variables.
    """
    N, n, m = prob.W.shape[0], prob.A.shape[1], prob.A.shape[0]
    if state.z1.shape[0] != N or state.z2.shape[0] != m or state.x.shape[0] != n:
        raise ValueError("state dimensions do not match the problem")
    z1, z2, u1, u2, tr = update(prob.W, prob.A, prob.y, prob.x0, state.z1, state.z2,
                                state.u1, state.u2, t1, t2, theta, prob.mu, prob.eps)
    _check_finite(z1, z2, u1, u2, tr.x)
    return AcfState(tr.x, z1, z2, u1, u2, state.k + 1)


class AcfResult(NamedTuple):
    x: np.ndarray
    objective: np.ndarray
    analysis_l1: np.ndarray
    residual: np.ndarray


def acf_solve(prob, iters, schedule=None):
    """Run ``iters`` ACF iterations and return the final primal point.

    ``schedule`` defaults to the recursive theta with unit step sizes. The
    returned ``x`` is evaluated from the final dual variables with
    ``theta[iters]``. Traces hold the smoothed objective, ``||W x||_1`` and the
    worst-column constraint residual ``||y - A x||`` of every iterate.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if schedule is None:
        schedule = build_acf(iters, prob.mu)
    if schedule.L < iters:
        raise ValueError(f"schedule covers {schedule.L} steps, {iters} requested")
    if schedule.mu != prob.mu:
        schedule = replace(schedule, mu=prob.mu)
    batch = prob.y.shape[1] if prob.y.ndim == 2 else None
    state = AcfState.zeros(prob.A.shape[1], prob.W.shape[0], prob.A.shape[0], batch)
    obj, l1, res = [], [], []
    for k in range(iters):
        state = acf_step(state, prob, schedule.t1[k], schedule.t2[k], schedule.theta[k])
        obj.append(prob.objective(state.x))
        l1.append(prob.analysis_l1(state.x))
        res.append(prob.residual(state.x))
    x, _, _ = primal_point(prob.W, prob.A, prob.x0, state.z1, state.z2, state.u1, state.u2,
                           schedule.theta[iters], prob.mu)
    return AcfResult(x, np.array(obj), np.array(l1), np.array(res))


def acf_baseline_mse(X, Y, A, W, iters=10, mu=100.0, eps=0.0, schedule=None):
    """Mean of ``||x_hat_i - x_i||^2`` over the columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0 or X.shape[1] == 0:
        raise ValueError("empty dataset")
    res = acf_solve(AcfProblem(A, W, Y, mu, eps), iters, schedule)
    return float(np.mean(np.sum((res.x - X) ** 2, axis=0)))
