"""Step-size schedules shared by the ACF iteration, the unfolded layers and
the bound formulas.

Arrays are indexed ``k = 0..L``. Layers consume entries ``0..L-1``; the
extra entry ``theta[L]`` feeds the affine output map.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Schedule:
    mu: float
    L: int
    t1: np.ndarray
    t2: np.ndarray
    theta: np.ndarray
    alpha: float = None
    beta: float = None
    theta_prime: float = None
    L_tilde: float = None
    kind: str = field(default="custom")

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("a schedule needs L >= 1")
        if not self.mu > 1:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        for name in ("t1", "t2", "theta"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.L + 1,):
                raise ValueError(f"{name} must have length L + 1 = {self.L + 1}")
            if not (np.all(arr > 0) and np.all(arr <= 1)):
                raise ValueError(f"{name} entries must lie in (0, 1]")
            if arr[0] != 1.0:
                raise ValueError(f"{name}[0] must equal 1")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def c_coeffs(self, k):
        return c_coeffs(self, k)

    def to_dict(self):
        return {
            "kind": self.kind, "mu": self.mu, "L": self.L, "alpha": self.alpha,
            "beta": self.beta, "theta_prime": self.theta_prime, "L_tilde": self.L_tilde,
            "t1": self.t1.tolist(), "t2": self.t2.tolist(), "theta": self.theta.tolist(),
        }


def theta_prime(mu, L_tilde):
    if L_tilde <= mu:
        raise ValueError(f"L_tilde must exceed mu ({L_tilde} <= {mu})")
    r = np.sqrt(mu / L_tilde)
    return float((1 - r) / (1 + r))


def build_geometric(L, mu=100.0, alpha=0.9, beta=0.9, L_tilde=1000.0):
    """``t1[k] = alpha**k``, ``t2[k] = beta**k``, ``theta[k] = theta'**k``."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    tp = theta_prime(mu, L_tilde)
    k = np.arange(L + 1, dtype=np.float64)
    return Schedule(mu, L, alpha ** k, beta ** k, tp ** k, alpha, beta, tp, L_tilde,
                    kind="geometric")


def build_acf_theta(L):
    """Accelerated multiplier sequence ``theta_{k+1} = 2 / (1 + sqrt(1 + 4 / theta_k^2))``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    theta = np.empty(L + 1)
    theta[0] = 1.0
    for k in range(L):
        theta[k + 1] = 2.0 / (1.0 + np.sqrt(1.0 + 4.0 / theta[k] ** 2))
    return theta


def build_acf(L, mu=100.0, t1=1.0, t2=1.0):
    """Recursive theta with constant step sizes (the solver default)."""
    theta = build_acf_theta(L)
    t1s = np.full(L + 1, float(t1))
    t2s = np.full(L + 1, float(t2))
    t1s[0] = t2s[0] = 1.0
    return Schedule(mu, L, t1s, t2s, theta, kind="acf")


def build_constant(L, mu=100.0):
    """``theta = t1 = t2 = 1`` throughout: plain projected dual ascent."""
    ones = np.ones(L + 1)
    return Schedule(mu, L, ones, ones, ones, kind="constant")


def c_coeffs(s, k):
    """``(t1[k] / (theta[k] mu), t2[k] / (theta[k] mu))``; ``(0, 0)`` at ``k = -1``."""
    if k == -1:
        return 0.0, 0.0
    if not 0 <= k <= s.L:
        raise IndexError(f"k={k} outside 0..{s.L}")
    return float(s.t1[k] / (s.theta[k] * s.mu)), float(s.t2[k] / (s.theta[k] * s.mu))


def c_arrays(s):
    """All ``c1, c2`` for the layer indices ``0..L-1``."""
    c1 = s.t1[: s.L] / (s.theta[: s.L] * s.mu)
    c2 = s.t2[: s.L] / (s.theta[: s.L] * s.mu)
    return c1, c2


@dataclass(frozen=True)
class AssumptionReport:
    c1_lambda: np.ndarray
    c1_lambda_sq: np.ndarray
    c2_a_sq: np.ndarray

    @property
    def per_layer(self):
        return (self.c1_lambda <= 1) & (self.c1_lambda_sq <= 1) & (self.c2_a_sq <= 1)

    @property
    def holds(self):
        return bool(np.all(self.per_layer))


def check_assumptions(s, lam, a_norm):
    """Evaluate ``c1 Lam <= 1``, ``c1 Lam^2 <= 1`` and ``c2 ||A||^2 <= 1`` per layer."""
    c1, c2 = c_arrays(s)
    return AssumptionReport(c1 * lam, c1 * lam ** 2, c2 * a_norm ** 2)


def schedule_from_dict(d):
    kind = d.get("kind", "custom")
    if kind == "geometric":
        return build_geometric(d["L"], d["mu"], d["alpha"], d["beta"], d["L_tilde"])
    return Schedule(d["mu"], d["L"], np.asarray(d["t1"]), np.asarray(d["t2"]),
                    np.asarray(d["theta"]), kind=kind)
