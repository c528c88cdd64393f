"""Thresholding nonlinearities and analysis operators."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import SpectralEstimate, read_dmat, rng_for, spectral_norm, write_dmat

KINDS = ("learnable", "haar_redundant", "finite_difference")


def soft_threshold(x, tau):
    """Componentwise ``sign(x) * max(|x| - tau, 0)``."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def soft_threshold_grad(x, tau):
    # 0 at the kink |x| == tau
    return (np.abs(np.asarray(x, dtype=np.float64)) > tau).astype(np.float64)


def truncate(x, tau):
    """Componentwise ``sign(x) * min(|x|, tau)``, i.e. clipping to ``[-tau, tau]``."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.minimum(np.abs(x), tau)


def truncate_grad(x, tau):
    # 0 at the kink |x| == tau
    return (np.abs(np.asarray(x, dtype=np.float64)) < tau).astype(np.float64)


@dataclass(frozen=True)
class AnalysisOperator:
    """An ``N x n`` analysis operator together with how it was built."""

    kind: str
    W: np.ndarray
    params: dict = field(default_factory=dict)
    spectral: SpectralEstimate = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError("W must be 2-D")
        # finite differences are square by construction; everything else is redundant
        if self.kind != "finite_difference" and W.shape[0] <= W.shape[1]:
            raise ValueError(f"analysis operator must be redundant (N > n), got {W.shape}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def N(self):
        return self.W.shape[0]

    @property
    def n(self):
        return self.W.shape[1]

    def norm(self):
        if self.spectral is None:
            object.__setattr__(self, "spectral", spectral_norm(self.W))
        return self.spectral.value

    def save(self, path):
        """Write ``<path>`` as DMAT plus a ``<path>.json`` sidecar."""
        path = Path(path)
        write_dmat(path, self.W)
        meta = {"kind": self.kind, "n": self.n, "N": self.N, **self.params}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        W = read_dmat(path)
        if W.shape != (meta["N"], meta["n"]):
            raise ValueError(f"sidecar says {meta['N']}x{meta['n']}, matrix is {W.shape}")
        params = {k: v for k, v in meta.items() if k not in ("kind", "n", "N")}
        return cls(meta["kind"], W, params)


def haar_redundant(n):
    """One-level undecimated Haar frame with circular boundary (``2n x n``).

    Rows ``0..n-1`` are ``(x_i + x_{i+1}) / sqrt(2)``, rows ``n..2n-1`` are
    ``(x_i - x_{i+1}) / sqrt(2)`` with indices mod ``n``. It is a tight
    frame: ``W.T @ W == 2 I``.
    """
    if n < 2:
        raise ValueError("haar_redundant needs n >= 2")
    eye = np.eye(n)
    shift = np.roll(eye, 1, axis=1)
    W = np.vstack([eye + shift, eye - shift]) / np.sqrt(2.0)
    return AnalysisOperator("haar_redundant", W)


def finite_difference(n):
    """Circular first differences, row ``i`` is ``e_{i+1 mod n} - e_i``."""
    if n < 2:
        raise ValueError("finite_difference needs n >= 2")
    eye = np.eye(n)
    return AnalysisOperator("finite_difference", np.roll(eye, 1, axis=1) - eye)


def init_learnable(n, N, scheme="normal", seed=0, a=2.0, b=2.0):
    """Random initial operator for training.

    ``normal``: i.i.d. N(0, 1/n). ``beta``: i.i.d. Beta(a, b), centred by
    its mean ``a / (a + b)`` and scaled by ``1 / sqrt(n)``.
    """
    if N <= n:
        raise ValueError(f"redundancy requires N > n, got N={N}, n={n}")
    rng = rng_for(seed, "init")
    if scheme == "normal":
        W = rng.standard_normal((N, n)) / np.sqrt(n)
        params = {"scheme": "normal", "seed": seed}
    elif scheme == "beta":
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be positive")
        W = (rng.beta(a, b, size=(N, n)) - a / (a + b)) / np.sqrt(n)
        params = {"scheme": "beta", "a": a, "b": b, "seed": seed}
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return AnalysisOperator("learnable", W, params)


def build_operator(kind, n, N=None, **kwargs):
    if kind in ("haar", "haar_redundant"):
        return haar_redundant(n)
    if kind in ("tv", "finite_difference"):
        return finite_difference(n)
    if kind == "learnable":
        return init_learnable(n, N, **kwargs)
    raise ValueError(f"unknown operator kind {kind!r}")
