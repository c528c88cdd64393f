"""Closed-form growth constants, Lipschitz constants and generalization bounds
for the unfolded decoder.

Everything is a pure function of :class:`BoundInputs`. Index conventions:
``Gamma_k``, ``Q_k``, ``c_{i,k}`` for ``k = 0..L-1``; ``Q_{-1} = 0``;
``Delta_0 = 0``; ``E_k`` and ``K_k`` for ``k = 1..L``.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .schedule import c_arrays, check_assumptions


@dataclass(frozen=True)
class BoundInputs:
    lam: float
    a_norm: float
    sched: object
    N: int
    n: int
    m: int
    s: int
    Y_fro: float
    B_in: float
    B_out: float
    delta: float = 0.05
    L: int = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("lam", "a_norm", "B_in", "B_out"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.Y_fro < 0:
            raise ValueError("Y_fro must be nonnegative")
        for name in ("N", "n", "m", "s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        L = self.sched.L if self.L is None else self.L
        if not 1 <= L <= self.sched.L:
            raise ValueError(f"L={L} outside 1..{self.sched.L}")
        object.__setattr__(self, "L", L)

    @property
    def mu(self):
        return self.sched.mu

    def coeffs(self):
        c1, c2 = c_arrays(self.sched)
        return c1[: self.L], c2[: self.L]

    def assumptions_hold(self):
        rep = check_assumptions(self.sched, self.lam, self.a_norm)
        return bool(np.all(rep.per_layer[: self.L]))


def gamma_seq(bi):
    """Per-layer ``Gamma_k`` (``k = 0..L-1``) and the uniform bound ``gamma``."""
    c1, c2 = bi.coeffs()
    lam, a = bi.lam, bi.a_norm
    gk = 2.0 * (c1 * lam ** 2 + c2 * a ** 2 + 2.0 * a * lam * (c1 + c2)) + 1.0
    return gk, 4.0 * (lam + a + 1.0) + 1.0


def q_seq(bi):
    """``Q_k`` for ``k = 0..L-1``."""
    c1, c2 = bi.coeffs()
    return bi.a_norm * (c1 * bi.lam + c2 * bi.a_norm) + c2


def zeta(gamma, k):
    """``(gamma^k - 1) / (gamma - 1)``."""
    k = np.asarray(k, dtype=np.float64)
    return (gamma ** k - 1.0) / (gamma - 1.0)


def _delta_exact(bi, k, gk, qk):
    # 2 mu ||Y|| (sum_{i<k} Q_{i-1} prod_{j=i}^{k-1} Gamma_j + Q_{k-1})
    if k == 0:
        return 0.0
    total = 0.0
    for i in range(1, k):  # i = 0 carries Q_{-1} = 0
        total += qk[i - 1] * float(np.prod(gk[i:k]))
    return 2.0 * bi.mu * bi.Y_fro * (total + qk[k - 1])


def f_norm_bound(bi, k):
    """``(exact_form, simplified)`` upper bounds on ``||f_W^k(Y)||_F``."""
    if not 1 <= k <= bi.L:
        raise ValueError(f"k={k} outside 1..{bi.L}")
    gk, gamma = gamma_seq(bi)
    exact = _delta_exact(bi, k, gk, q_seq(bi))
    simple = 2.0 * bi.mu * bi.Y_fro * (bi.a_norm + 1.0) * (float(zeta(gamma, k)) + 1.0)
    return exact, simple


def delta_seq(bi):
    """``Delta_k`` for ``k = 0..L-1`` with ``Delta_0 = 0``."""
    gk, qk = gamma_seq(bi)[0], q_seq(bi)
    return np.array([_delta_exact(bi, k, gk, qk) for k in range(bi.L)])


def e_seq(bi):
    """``E_k`` for ``k = 1..L`` (stored at positions ``0..L-1``)."""
    c1, c2 = bi.coeffs()
    dl = delta_seq(bi)
    lam, a = bi.lam, bi.a_norm
    return 2.0 * dl * (2.0 * lam * c1 + a * (c1 + c2)) + 2.0 * bi.mu * c1 * a * bi.Y_fro


def k_l_general(bi):
    """``K_L = sum_k (max Gamma)^{L-k} E_k``; returns ``(K_L, E, Delta)``."""
    gk, _ = gamma_seq(bi)
    gmax = float(np.max(gk))
    E = e_seq(bi)
    L = bi.L
    K = float(sum(gmax ** (L - k) * E[k - 1] for k in range(1, L + 1)))
    return K, E, delta_seq(bi)


def k_l_recursive(bi):
    """The same constant built forward: ``K_1 = E_1``, ``K_{k+1} = max(Gamma) K_k + E_{k+1}``."""
    gk, _ = gamma_seq(bi)
    gmax = float(np.max(gk))
    E = e_seq(bi)
    K = E[0]
    for k in range(1, bi.L):
        K = gmax * K + E[k]
    return float(K)


def kappa(gamma, L):
    """``gamma^L ((L-1)/(gamma(gamma-1)) + gamma(gamma-2)/(gamma-1)^2) - gamma^2(gamma-2)/(gamma-1)^2``.

    Regrouped so the ``L = 1`` value is exactly zero.
    """
    g = float(gamma)
    return g ** (L - 1) * (L - 1) / (g - 1) + g * (g - 2) * (g ** L - g) / (g - 1) ** 2


def k_l_simplified(bi):
    """Closed-form upper bound on ``K_L`` and the ``kappa_L`` it uses."""
    _, gamma = gamma_seq(bi)
    kl = kappa(gamma, bi.L)
    a = bi.a_norm
    K = 2.0 * bi.mu * bi.Y_fro * (a * (bi.L - 1 + 1.0 / bi.mu) + 2.0 * (a + 1) * (a + 3) * kl)
    return K, kl


def _k_l(bi, source):
    if source == "general":
        return k_l_general(bi)[0]
    if source == "simplified":
        return k_l_simplified(bi)[0]
    raise ValueError(f"unknown K_L source {source!r}")


def covering_bound(bi, eps_cover, K_L=None, source="general"):
    """Log covering number of the reconstruction set at Frobenius radius ``eps_cover``."""
    if not eps_cover > 0:
        raise ValueError("eps_cover must be positive")
    K = _k_l(bi, source) if K_L is None else K_L
    ratio = 2.0 * bi.lam * (bi.lam + bi.a_norm) * K / (bi.mu * eps_cover)
    return bi.N * bi.n * math.log1p(ratio)


def covering_ball(bi, eps_cover):
    """Log covering number of the spectral ball ``B_Lambda`` itself."""
    if not eps_cover > 0:
        raise ValueError("eps_cover must be positive")
    return bi.N * bi.n * math.log1p(2.0 * bi.lam / eps_cover)


def dudley_integral(bi, K_L=None, source="general"):
    """Entropy-integral estimate of the Rademacher complexity, integrated numerically."""
    K = _k_l(bi, source) if K_L is None else K_L
    a = math.sqrt(bi.s) * bi.B_out / 2.0
    val, _ = integrate.quad(lambda t: math.sqrt(covering_bound(bi, t, K)), 0.0, a, limit=200)
    return 16.0 * (bi.B_in + bi.B_out) / bi.s * val


def dudley_closed(bi, K_L=None, source="general"):
    """Closed-form upper bound on :func:`dudley_integral`."""
    K = _k_l(bi, source) if K_L is None else K_L
    b = 4.0 * bi.lam * (bi.lam + bi.a_norm) * K / (bi.mu * math.sqrt(bi.s) * bi.B_out)
    return (8.0 * (bi.B_in + bi.B_out) * bi.B_out * math.sqrt(bi.N * bi.n / bi.s)
            * math.sqrt(1.0 + math.log1p(b)))


def _confidence(B_in, B_out, s, delta):
    return 4.0 * (B_in + B_out) ** 2 * math.sqrt(2.0 * math.log(4.0 / delta) / s)


def pqr(bi):
    """The ``(p, q, r)`` shorthand exactly as stated for the summary theorem."""
    a = bi.a_norm
    p = bi.lam * (bi.lam + a) * a
    return p, p * (1.0 / bi.mu - 1.0), 2.0 * p * (a + 1) * (a + 3)


def gen_bound(bi, variant="thm5", k_l_source=None, as_printed=False):
    """Generalization gap bound.

    ``thm3`` uses ``B_in`` and ``B_out`` separately with ``K_L`` from
    ``k_l_source`` (default ``general``). ``thm5`` sets both constants to
    ``max(B_in, B_out)`` and defaults to the simplified ``K_L``. With
    ``as_printed`` the ``thm5`` value uses the ``(p, q, r)`` shorthand and
    the printed confidence term instead of composing the two results.
    """
    if variant == "thm3":
        B_in, B_out = bi.B_in, bi.B_out
        source = k_l_source or "general"
    elif variant == "thm5":
        B_in = B_out = max(bi.B_in, bi.B_out)
        source = k_l_source or "simplified"
    else:
        raise ValueError(f"unknown variant {variant!r}")
    root = math.sqrt(bi.N * bi.n / bi.s)
    if as_printed:
        if variant != "thm5":
            raise ValueError("as_printed applies to thm5 only")
        p, q, r = pqr(bi)
        _, kl = k_l_simplified(bi)
        arg = bi.Y_fro * (p + q * bi.L + r * kl) / (math.sqrt(bi.s) * B_out)
        return (16.0 * B_out ** 2 * root * math.sqrt(1.0 + math.log1p(arg))
                + 16.0 * B_out * math.sqrt(2.0 * math.log(4.0 / bi.delta) / bi.s))
    K = _k_l(bi, source)
    arg = 4.0 * bi.lam * (bi.lam + bi.a_norm) * K / (bi.mu * math.sqrt(bi.s) * B_out)
    return (8.0 * (B_in + B_out) * B_out * root * math.sqrt(1.0 + math.log1p(arg))
            + _confidence(B_in, B_out, bi.s, bi.delta))


@dataclass
class BoundReport:
    gamma_k: list
    gamma: float
    Q_k: list
    zeta: list
    Delta: list
    E: list
    K_L_general: float
    K_L_simplified: float
    kappa_L: float
    gen_bound_thm3: float
    gen_bound_thm5: float
    gen_bound_thm5_as_printed: float
    assumptions_hold: bool
    inputs: dict = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def bound_report(bi):
    gk, gamma = gamma_seq(bi)
    K, E, dl = k_l_general(bi)
    Ks, kl = k_l_simplified(bi)
    inputs = {
        "lambda": bi.lam, "a_norm": bi.a_norm, "mu": bi.mu, "L": bi.L, "N": bi.N, "n": bi.n,
        "m": bi.m, "s": bi.s, "Y_fro": bi.Y_fro, "B_in": bi.B_in, "B_out": bi.B_out,
        "delta": bi.delta, "schedule": bi.sched.kind,
    }
    return BoundReport(
        gamma_k=gk.tolist(), gamma=gamma, Q_k=q_seq(bi).tolist(),
        zeta=zeta(gamma, np.arange(1, bi.L + 1)).tolist(), Delta=dl.tolist(), E=E.tolist(),
        K_L_general=K, K_L_simplified=Ks, kappa_L=kl,
        gen_bound_thm3=gen_bound(bi, "thm3"), gen_bound_thm5=gen_bound(bi, "thm5"),
        gen_bound_thm5_as_printed=gen_bound(bi, "thm5", as_printed=True),
        assumptions_hold=bi.assumptions_hold(), inputs=inputs,
    )


SWEEP_FIELDS = ("N", "L", "s", "bound", "sqrt_NL_over_s")


def scaling_curve(base, grid, make_schedule, variant="thm5"):
    """Bound values over ``(N, L, s)`` triples next to ``sqrt(N L / s)``.

    ``make_schedule(L)`` supplies the schedule for each depth. ``||Y||_F`` is
    rescaled so that ``||Y||_F / sqrt(s)`` stays at its value in ``base``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    per_sample = base.Y_fro / math.sqrt(base.s)
    rows = []
    for N, L, s in grid:
        bi = BoundInputs(base.lam, base.a_norm, make_schedule(L), N, base.n, base.m, s,
                         per_sample * math.sqrt(s), base.B_in, base.B_out, base.delta, L)
        rows.append({"N": N, "L": L, "s": s, "bound": gen_bound(bi, variant),
                     "sqrt_NL_over_s": math.sqrt(N * L / s)})
    return rows


def rows_to_csv(rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
