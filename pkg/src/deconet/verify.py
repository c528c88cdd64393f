"""Randomised checks of the decoder against its analytic guarantees.

Each family draws toy instances, measures a quantity and compares it with
the matching bound. Results carry the number of trials, the number of
violations and the worst ratio ``measured / bound`` (``<= 1`` means the
bound held).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import bounds, network as net
from .linalg import gaussian_measurement, rng_for
from .schedule import build_geometric, check_assumptions


@dataclass
class FamilyResult:
    name: str
    trials: int
    violations: int
    worst_ratio: float

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {**asdict(self), "passed": self.passed}


@dataclass(frozen=True)
class ToyRegime:
    n: int = 10
    m: int = 5
    N: int = 20
    s: int = 8
    mu: float = 100.0
    lam: float = 1.0
    alpha: float = 0.9
    beta: float = 0.9
    L_tilde: float = 1000.0
    L: int = 5


class Instance:
    def __init__(self, A, Y, X, sched, bi):
        self.A, self.Y, self.X, self.sched, self.bi = A, Y, X, sched, bi


def sample_ball(rng, N, n, lam, low=0.2):
    """Random ``N x n`` matrix rescaled to spectral norm ``U(low, 1) * lam``."""
    W = rng.standard_normal((N, n))
    return W * (rng.uniform(low, 1.0) * lam / np.linalg.norm(W, 2))


def sample_instance(rng, reg, L=None, max_tries=100):
    """Draw ``A``, ``X`` and ``Y = A X`` such that the layer assumptions hold at ``lam``."""
    L = reg.L if L is None else L
    sched = build_geometric(L, reg.mu, reg.alpha, reg.beta, reg.L_tilde)
    for _ in range(max_tries):
        A = gaussian_measurement(reg.m, reg.n, int(rng.integers(2**31)))
        a_norm = float(np.linalg.norm(A, 2))
        if not check_assumptions(sched, reg.lam, a_norm).holds:
            continue
        X = rng.standard_normal((reg.n, reg.s))
        Y = A @ X + 1e-4 * rng.standard_normal((reg.m, reg.s))
        B_in = float(np.max(np.linalg.norm(Y, axis=0)))
        B_out = float(np.max(np.linalg.norm(X, axis=0)))
        bi = bounds.BoundInputs(reg.lam, a_norm, sched, reg.N, reg.n, reg.m, reg.s,
                                float(np.linalg.norm(Y)), B_in, B_out)
        return Instance(A, Y, X, sched, bi)
    raise RuntimeError("could not draw an instance satisfying the assumptions")


def _cfg(inst, L, eps=0.0, B_out=None):
    return net.DecoderConfig(inst.sched, inst.bi.B_out if B_out is None else B_out, eps, L)


def check_lemma2(trials=50, seed=0, reg=ToyRegime()):
    """``||f_W^k(Y)||_F`` against the exact and simplified growth bounds, ``k = 1..L``."""
    rng = rng_for(seed, "verify-lemma2")
    worst, bad, count = 0.0, 0, 0
    for _ in range(trials):
        inst = sample_instance(rng, reg)
        W = sample_ball(rng, reg.N, reg.n, reg.lam)
        _, _, states = net.layer_states(W, inst.Y, _cfg(inst, reg.L), inst.A)
        for k, v in enumerate(states, start=1):
            exact, simple = bounds.f_norm_bound(inst.bi, k)
            meas = float(np.linalg.norm(v))
            for b in (exact, simple):
                count += 1
                worst = max(worst, meas / b)
                bad += meas > b
    return FamilyResult("lemma2", count, int(bad), float(worst))


def _pairs(rng, reg):
    W1 = sample_ball(rng, reg.N, reg.n, reg.lam)
    if rng.uniform() < 0.5:
        W2 = sample_ball(rng, reg.N, reg.n, reg.lam)
    else:
        # nearby pair, scaled back into the ball if needed
        W2 = W1 + 1e-3 * rng.standard_normal(W1.shape)
        nrm = np.linalg.norm(W2, 2)
        if nrm > reg.lam:
            W2 *= reg.lam / nrm
    return W1, W2


def check_lipschitz(trials=200, seed=0, reg=ToyRegime(), depths=(1, 2, 5)):
    """Intermediate decoder differences against ``K_L ||W1 - W2||_2`` (general and simplified)."""
    rng = rng_for(seed, "verify-lipschitz")
    worst, bad, count = 0.0, 0, 0
    for t in range(trials):
        L = depths[t % len(depths)]
        inst = sample_instance(rng, reg, L)
        W1, W2 = _pairs(rng, reg)
        cfg = _cfg(inst, L)
        diff = np.linalg.norm(net.intermediate(W1, inst.Y, cfg, inst.A)
                              - net.intermediate(W2, inst.Y, cfg, inst.A))
        dW = np.linalg.norm(W1 - W2, 2)
        for K in (bounds.k_l_general(inst.bi)[0], bounds.k_l_simplified(inst.bi)[0]):
            count += 1
            ratio = diff / (K * dW)
            worst = max(worst, ratio)
            bad += ratio > 1.0
    return FamilyResult("lipschitz", count, int(bad), float(worst))


def check_decoder_lipschitz(trials=100, seed=0, reg=ToyRegime(), depths=(1, 2, 5)):
    """Clipped decoder differences against ``mu^-1 (Lam + ||A||) K_L ||W1 - W2||_F``."""
    rng = rng_for(seed, "verify-decoder")
    worst, bad = 0.0, 0
    for t in range(trials):
        L = depths[t % len(depths)]
        inst = sample_instance(rng, reg, L)
        W1, W2 = _pairs(rng, reg)
        cfg = _cfg(inst, L)
        diff = np.linalg.norm(net.predict(W1, inst.Y, cfg, inst.A)
                              - net.predict(W2, inst.Y, cfg, inst.A))
        K = bounds.k_l_general(inst.bi)[0]
        bound = (reg.lam + inst.bi.a_norm) / reg.mu * K * np.linalg.norm(W1 - W2)
        worst = max(worst, diff / bound)
        bad += diff > bound
    return FamilyResult("decoder_lipschitz", trials, int(bad), float(worst))


def check_lemma1(trials=100, seed=0, reg=ToyRegime()):
    """Measured ``2||G1_k|| + 2||G2_k|| + 1`` against ``Gamma_k`` and ``Gamma_k <= gamma``."""
    rng = rng_for(seed, "verify-lemma1")
    worst, bad, count = 0.0, 0, 0
    for _ in range(trials):
        inst = sample_instance(rng, reg)
        W = sample_ball(rng, reg.N, reg.n, reg.lam)
        gk, gamma = bounds.gamma_seq(inst.bi)
        for k in range(reg.L):
            lm = net.build_layer(W, inst.A, inst.sched, k)
            meas = 2 * np.linalg.norm(lm.G1, 2) + 2 * np.linalg.norm(lm.G2, 2) + 1
            count += 1
            worst = max(worst, meas / gk[k])
            bad += (meas > gk[k]) or (gk[k] > gamma)
    return FamilyResult("lemma1", count, int(bad), float(worst))


def dense_forward(W, Y, cfg, A):
    """Decoder output and final state through the materialised layer matrices."""
    X0 = A.T @ Y
    p = 2 * W.shape[0] + 2 * A.shape[0]
    v = np.zeros((p, Y.shape[1]))
    for k in range(cfg.L):
        v = net.build_layer(W, A, cfg.schedule, k).apply(v, W, A, Y, X0, cfg.eps)
    x = net.output_matrix(W, A, cfg.schedule, cfg.L) @ v + X0
    return net.clip_columns(x, cfg.B_out)[0], v


def check_layer_consistency(trials=30, seed=0, reg=ToyRegime(), tol=1e-10):
    """Fast forward pass against the dense block transcription of every layer."""
    rng = rng_for(seed, "verify-dense")
    worst, bad = 0.0, 0
    for _ in range(trials):
        inst = sample_instance(rng, reg)
        W = sample_ball(rng, reg.N, reg.n, reg.lam)
        cfg = _cfg(inst, reg.L, eps=float(rng.choice([0.0, 1e-3])))
        Xd, vd = dense_forward(W, inst.Y, cfg, inst.A)
        Xf = net.predict(W, inst.Y, cfg, inst.A)
        vf = net.intermediate(W, inst.Y, cfg, inst.A)
        err = max(np.linalg.norm(Xd - Xf) / max(np.linalg.norm(Xd), 1e-300),
                  np.linalg.norm(vd - vf) / max(np.linalg.norm(vd), 1e-300))
        worst = max(worst, err / tol)
        bad += err > tol
    return FamilyResult("layer_consistency", trials, int(bad), float(worst))


def _near_kink(cache, cfg, margin):
    for tr in cache.steps:
        if np.min(np.abs(np.abs(tr.pre1) - tr.tau1)) < margin:
            return True
        if np.min(np.abs(np.abs(tr.pre2) - tr.tau2)) < margin:
            return True
    return bool(np.min(np.abs(cache.col_norms - cfg.B_out)) < margin)


def gradient_error(W, Y, X, A, cfg, h=1e-6):
    """Backward gradient against central differences of the MSE.

    Returns ``max_ij |fd_ij - g_ij| / max_ij |g_ij|``.
    """
    Xhat, cache = net.forward(W, Y, cfg, A)
    _, g = net.mse_loss(Xhat, X)
    gW = net.backward(cache, g, W, A, cfg)
    fd = np.empty_like(W)
    for idx in np.ndindex(*W.shape):
        Wp = W.copy()
        Wp[idx] += h
        Wm = W.copy()
        Wm[idx] -= h
        fd[idx] = (net.mse_loss(net.predict(Wp, Y, cfg, A), X)[0]
                   - net.mse_loss(net.predict(Wm, Y, cfg, A), X)[0]) / (2 * h)
    return float(np.max(np.abs(fd - gW)) / max(np.max(np.abs(gW)), 1e-300))


def check_gradient(trials=25, seed=0, n=6, m=3, N=8, L=3, batch=4, tol=1e-5, margin=1e-4):
    """Finite-difference check of :func:`deconet.network.backward` on kink-free draws."""
    rng = rng_for(seed, "verify-gradient")
    sched = build_geometric(L, 100.0)
    worst, bad, done = 0.0, 0, 0
    while done < trials:
        A = gaussian_measurement(m, n, int(rng.integers(2**31)))
        W = rng.standard_normal((N, n)) / np.sqrt(n)
        X = rng.standard_normal((n, batch))
        Y = A @ X + 1e-2 * rng.standard_normal((m, batch))
        eps = float(rng.choice([0.0, 0.05]))
        # half the draws clip every output column
        B_out = float(rng.choice([100.0, 0.3]))
        cfg = net.DecoderConfig(sched, B_out, eps)
        _, cache = net.forward(W, Y, cfg, A)
        if _near_kink(cache, cfg, margin):
            continue
        err = gradient_error(W, Y, X, A, cfg)
        worst = max(worst, err / tol)
        bad += err > tol
        done += 1
    return FamilyResult("gradient", trials, int(bad), float(worst))


def check_clipping(trials=50, seed=0, reg=ToyRegime()):
    """Every decoder column norm stays below ``B_out + 1e-12``."""
    rng = rng_for(seed, "verify-clip")
    worst, bad, count = 0.0, 0, 0
    for _ in range(trials):
        inst = sample_instance(rng, reg)
        W = rng.standard_normal((reg.N, reg.n)) * rng.uniform(0.1, 3.0)
        B = float(rng.uniform(0.05, 2.0) * inst.bi.B_out)
        Xhat = net.predict(W, inst.Y, _cfg(inst, reg.L, B_out=B), inst.A)
        norms = np.linalg.norm(Xhat, axis=0)
        count += norms.size
        worst = max(worst, float(np.max(norms)) / B)
        bad += int(np.sum(norms > B + 1e-12))
    return FamilyResult("clipping", count, int(bad), float(worst))


FAMILIES = {
    "gradient": check_gradient,
    "lemma2": check_lemma2,
    "lipschitz": check_lipschitz,
    "decoder_lipschitz": check_decoder_lipschitz,
    "clipping": check_clipping,
    "layer_consistency": check_layer_consistency,
    "lemma1": check_lemma1,
}
# lemma1 is opt-in: the stated inequality does not hold for redundant operators
DEFAULT_FAMILIES = ("gradient", "lemma2", "lipschitz", "decoder_lipschitz", "clipping",
                    "layer_consistency")


def run_families(names=DEFAULT_FAMILIES, seed=0, trials=None, L=5):
    if L < 1:
        raise ValueError("L must be >= 1")
    out = []
    for name in names:
        fn = FAMILIES[name]
        kw = {"seed": seed}
        if trials is not None:
            kw["trials"] = trials
        if name not in ("gradient",):
            kw["reg"] = ToyRegime(L=L)
            if name in ("lipschitz", "decoder_lipschitz"):
                kw["depths"] = tuple(sorted({1, min(2, L), L}))
        out.append(fn(**kw))
    return out
