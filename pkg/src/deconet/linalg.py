"""Dense matrix kernels: spectral/Frobenius norms, Gaussian measurement
matrices, spectral-ball projection and the DMAT binary format.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.
"""

import struct
import zlib
from pathlib import Path
from typing import NamedTuple

import numpy as np

DMAT_MAGIC = b"DMAT"
DMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
# refuse headers whose payload would exceed this many entries
_MAX_ENTRIES = 1 << 34


class DmatFormatError(ValueError):
    """Raised when a DMAT file is malformed."""


class SpectralNormError(RuntimeError):
    """Power iteration did not reach the requested tolerance.

    The best estimate found so far is kept on the exception as ``estimate``.
    """

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class SpectralEstimate(NamedTuple):
    value: float
    iterations: int
    residual: float


def sub_seed(root, label):
    """Derive an independent integer seed from ``root`` and a text label.

    Uses ``numpy.random.SeedSequence`` so that streams for different labels
    are statistically independent. The label is hashed with CRC32, which is
    stable across interpreter runs (unlike ``hash``).
    """
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed, label=None):
    """PCG64 generator; normals are drawn with numpy's ziggurat sampler."""
    if label is not None:
        seed = sub_seed(seed, label)
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(M, name="M"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    return M


def spectral_norm(M, tol=1e-10, max_iter=10000, seed=0):
    """Largest singular value of ``M`` by power iteration on the Gram matrix.

    Iterates on whichever of ``M.T @ M`` / ``M @ M.T`` is smaller. Stops when
    the eigen-residual ``||G v - lam v|| / lam`` drops below ``tol``.

    Raises
    ------
    SpectralNormError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    M = as_matrix(M)
    if not np.any(M):
        return SpectralEstimate(0.0, 0, 0.0)
    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    v = rng_for(seed, "spectral_start").standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = G @ v
        lam = float(v @ w)
        if lam <= 0.0:
            # start vector orthogonal to the range; restart from a dense vector
            v = np.ones(G.shape[0]) / np.sqrt(G.shape[0]) + 1e-3 * v
            v /= np.linalg.norm(v)
            continue
        res = float(np.linalg.norm(w - lam * v) / lam)
        if res <= tol:
            return SpectralEstimate(float(np.sqrt(lam)), it, res)
        v = w / np.linalg.norm(w)
    best = SpectralEstimate(float(np.sqrt(max(lam, 0.0))), max_iter, res)
    raise SpectralNormError(
        f"power iteration stalled at residual {res:.3e} after {max_iter} iterations", best
    )


def spectral_value(M, tol=1e-10, max_iter=10000):
    """Spectral norm as a float, falling back to the best estimate on stall."""
    try:
        return spectral_norm(M, tol, max_iter).value
    except SpectralNormError as err:
        return err.estimate.value


def frobenius_norm(M):
    M = np.asarray(M, dtype=np.float64)
    return float(np.sqrt(np.sum(M * M)))


def gaussian_measurement(m, n, seed):
    """Random ``m x n`` Gaussian matrix normalised as ``A / sqrt(m)``."""
    if not 1 <= m < n:
        raise ValueError(f"need 1 <= m < n, got m={m}, n={n}")
    A = rng_for(seed, "measurement").standard_normal((m, n))
    return A / np.sqrt(m)


def project_spectral_ball(W, lambda_cap, tol=1e-10):
    """Rescale ``W`` onto the spectral-norm ball of radius ``lambda_cap``.

    Matrices already inside the ball (up to the power-iteration tolerance)
    are returned unchanged, which makes the projection idempotent.
    """
    if lambda_cap <= 0:
        raise ValueError("lambda_cap must be positive")
    W = as_matrix(W, "W")
    norm = spectral_value(W, tol)
    if norm <= lambda_cap * (1.0 + 1e3 * tol):
        return W
    return W * (lambda_cap / norm)


def write_dmat(path, M):
    M = as_matrix(M)
    rows, cols = M.shape
    payload = np.ascontiguousarray(M, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DMAT_MAGIC, DMAT_VERSION, rows, cols))
        fh.write(payload)


def read_dmat(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DmatFormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != DMAT_MAGIC:
        raise DmatFormatError(f"{path}: bad magic {magic!r}")
    if version != DMAT_VERSION:
        raise DmatFormatError(f"{path}: unsupported version {version}")
    if rows < 1 or cols < 1 or rows * cols > _MAX_ENTRIES:
        raise DmatFormatError(f"{path}: invalid dimensions {rows}x{cols}")
    expected = rows * cols * 8
    body = data[_HEADER.size:]
    if len(body) != expected:
        raise DmatFormatError(
            f"{path}: payload has {len(body)} bytes, header implies {expected}"
        )
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
