"""Synthetic data, noisy measurements, MNIST IDX ingestion, splits and the
dataset directory format (``X.dmat``, ``Y.dmat``, ``A.dmat``, ``meta.json``)."""

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import read_dmat, rng_for, write_dmat

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Signals ``X`` (``n x s``) and measurements ``Y = A X + E`` (``m x s``)."""

    X: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    eps: float
    noise_std: float
    seed: int
    B_in: float
    B_out: float
    n_train: int = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError("X and Y must have the same number of columns")
        if self.A.shape != (self.Y.shape[0], self.X.shape[0]):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.Y.shape[0], self.X.shape[0])}")
        if self.n_train is None:
            object.__setattr__(self, "n_train", self.X.shape[1])
        if not 0 < self.n_train <= self.X.shape[1]:
            raise ValueError("n_train out of range")

    @property
    def s(self):
        return self.X.shape[1]

    def train(self):
        return self.X[:, : self.n_train], self.Y[:, : self.n_train]

    def test(self):
        return self.X[:, self.n_train:], self.Y[:, self.n_train:]


def gen_synthetic(n, s, seed):
    """``n x s`` matrix of i.i.d. standard normal columns."""
    if n < 1 or s < 1:
        raise ValueError("n and s must be >= 1")
    return rng_for(seed, "data").standard_normal((n, s))


def measure(X, A, noise_std, seed, per_sample=False):
    """``Y = A X + E`` with ``E ~ N(0, noise_std^2)``.

    ``eps`` is the mean column residual ``||y_i - A x_i||``; with
    ``per_sample`` the vector of residuals is returned instead.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"A {A.shape} cannot measure X {X.shape}")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    AX = A @ X
    E = noise_std * rng_for(seed, "noise").standard_normal(AX.shape)
    Y = AX + E
    res = np.linalg.norm(Y - AX, axis=0)
    return Y, (res if per_sample else float(np.mean(res)))


def estimate_bounds_constants(X, Y):
    """``(B_in, B_out)`` as the largest measurement and signal column norms."""
    if X.size == 0 or Y.size == 0:
        raise ValueError("empty dataset")
    return float(np.max(np.linalg.norm(Y, axis=0))), float(np.max(np.linalg.norm(X, axis=0)))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path):
    """Raw IDX array (any element type) with its magic number."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError("truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    types = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if zero != 0 or dtype_code not in types or ndim == 0:
        raise IdxFormatError(f"bad IDX magic {raw[:4].hex()}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = 1
    for d in dims:
        count *= d
    if count > 1 << 34:
        raise IdxFormatError(f"IDX dimensions {dims} too large")
    dt = np.dtype(types[dtype_code])
    if len(raw) - head != count * dt.itemsize:
        raise IdxFormatError(f"payload has {len(raw) - head} bytes, header implies {count * dt.itemsize}")
    magic = (dtype_code << 8) | ndim
    return magic, np.frombuffer(raw, dtype=dt, offset=head).reshape(dims)


def load_idx(path):
    """MNIST-style image file as an ``(rows*cols) x count`` matrix scaled to ``[0, 1]``.

    Each image is vectorised row-major into one column.
    """
    magic, arr = read_idx(path)
    if magic != IDX_IMAGES:
        raise IdxFormatError(f"expected image magic 0x{IDX_IMAGES:08x}, got 0x{magic:08x}")
    return arr.reshape(arr.shape[0], -1).T.astype(np.float64) / 255.0


def load_idx_labels(path):
    magic, arr = read_idx(path)
    if magic != IDX_LABELS:
        raise IdxFormatError(f"expected label magic 0x{IDX_LABELS:08x}, got 0x{magic:08x}")
    return arr.astype(np.int64)


def write_idx_images(path, images):
    """Write a ``count x rows x cols`` uint8 array in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, 3) + struct.pack(">3I", *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def downsample2(X, side):
    """2x2 average pooling of square images stored as columns."""
    if X.shape[0] != side * side or side % 2:
        raise ValueError("columns must be even-sided square images")
    imgs = X.T.reshape(-1, side // 2, 2, side // 2, 2)
    return imgs.mean(axis=(2, 4)).reshape(X.shape[1], -1).T


def split_index(s, train_frac):
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    n_train = int(round(train_frac * s))
    if n_train == 0 or n_train == s:
        raise ValueError(f"split of {s} samples at {train_frac} leaves an empty side")
    return n_train


def batches(n, batch, seed):
    """Shuffled index batches over ``range(n)``; the last one may be short."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if n < 1:
        raise ValueError("empty split")
    order = rng_for(seed, "shuffle").permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def split_and_batch(ds, train_frac, batch, seed):
    """Split the columns of ``ds`` and return ``(train_batches, test_index)``.

    The first ``round(train_frac * s)`` columns form the training split. Only
    the training indices are shuffled.
    """
    n_train = split_index(ds.s, train_frac)
    return batches(n_train, batch, seed), np.arange(n_train, ds.s)


def make_synthetic(n, m, s_train, s_test, noise_std, seed, A=None):
    """Synthetic dataset with a fresh normalised Gaussian ``A`` unless one is given."""
    from .linalg import gaussian_measurement

    A = gaussian_measurement(m, n, seed) if A is None else np.asarray(A, dtype=np.float64)
    X = gen_synthetic(n, s_train + s_test, seed)
    Y, eps = measure(X, A, noise_std, seed)
    B_in, B_out = estimate_bounds_constants(X[:, :s_train], Y[:, :s_train])
    return Dataset(X, Y, A, eps, noise_std, seed, B_in, B_out, s_train)


def save_dataset(ds, directory, extra_meta=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_dmat(d / "X.dmat", ds.X)
    write_dmat(d / "Y.dmat", ds.Y)
    write_dmat(d / "A.dmat", ds.A)
    meta = {
        "n": ds.X.shape[0], "m": ds.Y.shape[0], "s": ds.s, "n_train": ds.n_train,
        "eps": ds.eps, "noise_std": ds.noise_std, "seed": ds.seed,
        "B_in": ds.B_in, "B_out": ds.B_out, "A_path": "A.dmat", **ds.extra,
        **(extra_meta or {}),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_dataset(directory):
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    known = {"n", "m", "s", "n_train", "eps", "noise_std", "seed", "B_in", "B_out", "A_path"}
    return Dataset(read_dmat(d / "X.dmat"), read_dmat(d / "Y.dmat"),
                   read_dmat(d / meta.get("A_path", "A.dmat")), meta["eps"], meta["noise_std"],
                   meta["seed"], meta["B_in"], meta["B_out"], meta["n_train"],
                   {k: v for k, v in meta.items() if k not in known})
