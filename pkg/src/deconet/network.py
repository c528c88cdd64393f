"""DECONET: the ACF iteration unrolled into ``L`` layers that share one
trainable analysis operator ``W``.

Signals and measurements are stored as columns (``X`` is ``n x s``, ``Y`` is
``m x s``). Gradients with respect to ``W`` are derived by hand; the layer
blocks ``G1``/``G2`` are only materialised by :func:`build_layer`, the
forward and backward passes apply them through products with ``W`` and ``A``.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import acf
from .linalg import project_spectral_ball, rng_for, spectral_value
from .operators import soft_threshold, soft_threshold_grad, truncate, truncate_grad

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    schedule: object
    B_out: float
    eps: float = 0.0
    L: int = None

    def __post_init__(self):
        if not self.B_out > 0:
            raise ValueError("B_out must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        L = self.schedule.L if self.L is None else self.L
        if not 1 <= L <= self.schedule.L:
            raise ValueError(f"L={L} outside 1..{self.schedule.L}")
        object.__setattr__(self, "L", L)

    @property
    def mu(self):
        return self.schedule.mu


class ForwardCache(NamedTuple):
    steps: list
    thetas: np.ndarray
    final: acf.StepTrace
    x_pre: np.ndarray
    col_norms: np.ndarray
    clipped: np.ndarray
    W_shape: tuple
    batch: int


def _check_shapes(W, A, Y):
    if W.shape[1] != A.shape[1]:
        raise ValueError(f"W {W.shape} and A {A.shape} disagree on n")
    if Y.ndim != 2 or Y.shape[0] != A.shape[0]:
        raise ValueError(f"Y must be m x s with m={A.shape[0]}, got {Y.shape}")


def layer_states(W, Y, cfg, A, keep_traces=False):
    """Run the ``L`` layers; returns the final dual variables and per-layer data.

    With ``keep_traces`` the per-layer :class:`acf.StepTrace` objects are kept,
    otherwise the stacked states ``v_k = [z1; z2; u1; u2]`` for ``k = 1..L``.
    """
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_shapes(W, A, Y)
    sch = cfg.schedule
    X0 = A.T @ Y
    N, m, s = W.shape[0], A.shape[0], Y.shape[1]
    z1 = np.zeros((N, s))
    u1 = np.zeros((N, s))
    z2 = np.zeros((m, s))
    u2 = np.zeros((m, s))
    kept = []
    for k in range(cfg.L):
        z1, z2, u1, u2, tr = acf.update(W, A, Y, X0, z1, z2, u1, u2, sch.t1[k], sch.t2[k],
                                        sch.theta[k], sch.mu, cfg.eps)
        kept.append(tr if keep_traces else np.vstack([z1, z2, u1, u2]))
    return (z1, z2, u1, u2), X0, kept


def intermediate(W, Y, cfg, A):
    """Output of the ``L``-layer intermediate decoder: the ``p x s`` state ``v_L``."""
    (z1, z2, u1, u2), _, _ = layer_states(W, Y, cfg, A)
    return np.vstack([z1, z2, u1, u2])


def clip_columns(X, B_out):
    """Rescale columns with norm above ``B_out`` onto the sphere of radius ``B_out``."""
    norms = np.linalg.norm(X, axis=0)
    clipped = norms > B_out
    scale = np.ones_like(norms)
    scale[clipped] = B_out / norms[clipped]
    return X * scale, norms, clipped


def forward(W, Y, cfg, A):
    """Decoder output ``psi(phi(f_W^L(Y)))`` and the cache for :func:`backward`."""
    (z1, z2, u1, u2), X0, traces = layer_states(W, Y, cfg, A, keep_traces=True)
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    theta_L = cfg.schedule.theta[cfg.L]
    x_pre, zb1, zb2 = acf.primal_point(W, A, X0, z1, z2, u1, u2, theta_L, cfg.mu)
    if not np.all(np.isfinite(x_pre)):
        raise FloatingPointError("non-finite decoder output")
    Xhat, norms, clipped = clip_columns(x_pre, cfg.B_out)
    final = acf.StepTrace(zb1, zb2, x_pre, None, None, 0.0, 0.0)
    cache = ForwardCache(traces, cfg.schedule.theta[: cfg.L + 1].copy(), final, x_pre, norms,
                         clipped, W.shape, Y.shape[1])
    return Xhat, cache


def predict(W, Y, cfg, A):
    return forward(W, Y, cfg, A)[0]


def backward(cache, grad_Xhat, W, A, cfg):
    """Gradient of ``<grad_Xhat, Xhat>`` with respect to ``W``."""
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    G = np.asarray(grad_Xhat, dtype=np.float64)
    if W.shape != cache.W_shape or G.shape != cache.x_pre.shape or len(cache.steps) != cfg.L:
        raise ValueError("cache does not match this forward pass")
    sch = cfg.schedule
    mu = cfg.mu

    # clipping map x -> B x / ||x|| on the clipped columns
    if np.any(cache.clipped):
        G = G.copy()
        idx = cache.clipped
        x = cache.x_pre[:, idx]
        nr = cache.col_norms[idx]
        g = G[:, idx]
        G[:, idx] = (cfg.B_out / nr) * (g - x * (np.sum(x * g, axis=0) / nr ** 2))

    th = cache.thetas[cfg.L]
    gW = cache.final.zbar1 @ G.T / mu
    g_zb1 = W @ G / mu
    g_zb2 = -(A @ G) / mu
    g_z1, g_u1 = th * g_zb1, (1.0 - th) * g_zb1
    g_z2, g_u2 = th * g_zb2, (1.0 - th) * g_zb2

    for k in range(cfg.L - 1, -1, -1):
        tr = cache.steps[k]
        th = cache.thetas[k]
        s1 = sch.t1[k] / th
        s2 = sch.t2[k] / th
        g_pre1 = (g_z1 + th * g_u1) * truncate_grad(tr.pre1, tr.tau1)
        g_pre2 = (g_z2 + th * g_u2) * soft_threshold_grad(tr.pre2, tr.tau2)
        g_u1 = (1.0 - th) * g_u1
        g_u2 = (1.0 - th) * g_u2
        g_x = -s1 * (W.T @ g_pre1) + s2 * (A.T @ g_pre2)
        gW -= s1 * (g_pre1 @ tr.x.T)
        gW += tr.zbar1 @ g_x.T / mu
        g_zb1 = g_pre1 + W @ g_x / mu
        g_zb2 = g_pre2 - A @ g_x / mu
        g_u1 = g_u1 + (1.0 - th) * g_zb1
        g_u2 = g_u2 + (1.0 - th) * g_zb2
        g_z1 = th * g_zb1
        g_z2 = th * g_zb2
    return gW


def mse_loss(Xhat, X):
    """``(1/s) sum_j ||xhat_j - x_j||^2`` and its gradient ``(2/s)(Xhat - X)``."""
    Xhat = np.asarray(Xhat, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Xhat.shape != X.shape:
        raise ValueError(f"shape mismatch {Xhat.shape} vs {X.shape}")
    s = X.shape[1] if X.ndim == 2 else 1
    diff = Xhat - X
    return float(np.sum(diff * diff) / s), (2.0 / s) * diff


def ege(train_mse, test_mse):
    """Empirical generalization error ``|test - train|``."""
    return abs(test_mse - train_mse)


class LayerMats(NamedTuple):
    G1: np.ndarray
    G2: np.ndarray
    theta_diag: np.ndarray
    D_diag: np.ndarray
    t1: float
    t2: float
    theta: float
    k: int

    @property
    def p(self):
        return self.G1.shape[1]

    def biases(self, W, A, y, x0):
        return (self.t1 / self.theta) * (W @ x0), (self.t2 / self.theta) * (y - A @ x0)

    def apply(self, v, W, A, y, x0, eps):
        """Dense layer ``D v + Theta sigma(v)``; for verification at toy sizes."""
        b1, b2 = self.biases(W, A, y, x0)
        a = truncate(self.G1 @ v - b1, self.t1 / self.theta)
        c = soft_threshold(self.G2 @ v - b2, (self.t2 / self.theta) * eps)
        sig = np.concatenate([a, c, a, c])
        if v.ndim == 2:
            return self.D_diag[:, None] * v + self.theta_diag[:, None] * sig
        return self.D_diag * v + self.theta_diag * sig


def build_layer(W, A, sched, k):
    """Materialise ``G1`` (``N x p``), ``G2`` (``m x p``) and the diagonals for layer ``k``."""
    if not 0 <= k < sched.L:
        raise IndexError(f"layer index {k} outside 0..{sched.L - 1}")
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if W.shape[1] != A.shape[1]:
        raise ValueError("W and A disagree on n")
    N, m = W.shape[0], A.shape[0]
    th, t1, t2, mu = sched.theta[k], sched.t1[k], sched.t2[k], sched.mu
    P1 = np.eye(N) - (t1 / (th * mu)) * (W @ W.T)
    P2 = np.eye(m) - (t2 / (th * mu)) * (A @ A.T)
    WA = W @ A.T
    G1 = np.hstack([th * P1, (t1 / mu) * WA, (1 - th) * P1, (1 - th) * (t1 / (th * mu)) * WA])
    G2 = np.hstack([(t2 / mu) * WA.T, th * P2, (1 - th) * (t2 / (th * mu)) * WA.T, (1 - th) * P2])
    theta_diag = np.concatenate([np.full(N + m, sched.theta[0]), np.full(N + m, th)])
    return LayerMats(G1, G2, theta_diag, 1.0 - theta_diag, t1, t2, th, k)


def output_matrix(W, A, sched, L=None):
    """The affine output map's matrix ``Phi`` (``n x p``)."""
    L = sched.L if L is None else L
    th, mu = sched.theta[L], sched.mu
    return np.hstack([th * W.T, -th * A.T, (1 - th) * W.T, -(1 - th) * A.T]) / mu


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch: int = 128
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    lambda_cap: float = None


@dataclass(frozen=True)
class TrainState:
    W: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    best_ege: float = math.inf
    since_best: int = 0

    @classmethod
    def fresh(cls, W):
        W = np.array(W, dtype=np.float64)
        return cls(W, np.zeros_like(W), np.zeros_like(W))


def adam_step(ts, grad_W, lr, beta1=0.9, beta2=0.999, eps_adam=1e-8, lambda_cap=None):
    """Bias-corrected Adam update of ``ts.W``; optionally re-project onto the spectral ball."""
    if grad_W.shape != ts.W.shape:
        raise ValueError("gradient shape does not match W")
    t = ts.step + 1
    m = beta1 * ts.m + (1.0 - beta1) * grad_W
    v = beta2 * ts.v + (1.0 - beta2) * grad_W * grad_W
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    W = ts.W - lr * m_hat / (np.sqrt(v_hat) + eps_adam)
    if lambda_cap is not None:
        W = project_spectral_ball(W, lambda_cap)
    return replace(ts, W=W, m=m, v=v, step=t)


def evaluate_mse(W, Y, X, cfg, A, chunk=1024):
    total = 0.0
    for j in range(0, X.shape[1], chunk):
        Xhat = predict(W, Y[:, j:j + chunk], cfg, A)
        total += float(np.sum((Xhat - X[:, j:j + chunk]) ** 2))
    return total / X.shape[1]


class TrainResult(NamedTuple):
    W: np.ndarray
    history: list
    best_epoch: int
    state: TrainState


METRIC_FIELDS = ("epoch", "train_mse", "test_mse", "ege", "grad_norm", "w_spectral")


def train(X_train, Y_train, X_test, Y_test, A, cfg, W_init, opts=TrainOptions(), on_epoch=None):
    """Adam on the training MSE with EGE-based early stopping.

    After each epoch the full train and test MSE and their gap (EGE) are
    recorded. Training stops when the EGE has not improved for
    ``opts.patience`` epochs, and the operator with the lowest EGE is returned.
    """
    if X_train.shape[1] == 0 or X_test.shape[1] == 0:
        raise ValueError("empty train or test split")
    s = X_train.shape[1]
    rng = rng_for(opts.seed, "shuffle")
    ts = TrainState.fresh(W_init)
    best_W, best_epoch = ts.W.copy(), 0
    history = []
    for epoch in range(1, opts.max_epochs + 1):
        order = rng.permutation(s)
        grad_norms = []
        try:
            # overflow anywhere means the iterates have left any sensible range
            with np.errstate(over="raise", invalid="raise"):
                for j in range(0, s, opts.batch):
                    idx = order[j:j + opts.batch]
                    Xhat, cache = forward(ts.W, Y_train[:, idx], cfg, A)
                    loss, g = mse_loss(Xhat, X_train[:, idx])
                    if not math.isfinite(loss):
                        raise FloatingPointError("non-finite loss")
                    gW = backward(cache, g, ts.W, A, cfg)
                    grad_norms.append(float(np.linalg.norm(gW)))
                    ts = adam_step(ts, gW, opts.lr, opts.beta1, opts.beta2, opts.eps_adam,
                                   opts.lambda_cap)
                train_mse = evaluate_mse(ts.W, Y_train, X_train, cfg, A)
                test_mse = evaluate_mse(ts.W, Y_test, X_test, cfg, A)
                w_spec = spectral_value(ts.W)
        except FloatingPointError as exc:
            with np.errstate(over="ignore", invalid="ignore"):
                w_fro = np.linalg.norm(ts.W)
            raise TrainingDivergedError(
                f"{exc} at epoch {epoch}, step {ts.step}; ||W||_F={w_fro:.3e}"
            ) from None
        if not (math.isfinite(train_mse) and math.isfinite(test_mse)):
            raise TrainingDivergedError(f"non-finite MSE after epoch {epoch}")
        gap = ege(train_mse, test_mse)
        row = {
            "epoch": epoch, "train_mse": train_mse, "test_mse": test_mse, "ege": gap,
            "grad_norm": float(np.mean(grad_norms)), "w_spectral": w_spec,
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        logger.debug("epoch %d train %.6g test %.6g ege %.3g", epoch, train_mse, test_mse, gap)
        if gap < ts.best_ege:
            ts = replace(ts, best_ege=gap, since_best=0)
            best_W, best_epoch = ts.W.copy(), epoch
        else:
            ts = replace(ts, since_best=ts.since_best + 1)
            if ts.since_best >= opts.patience:
                break
    return TrainResult(best_W, history, best_epoch, ts)
