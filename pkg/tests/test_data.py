import gzip
import struct

import numpy as np
import pytest

from deconet import data
from deconet.linalg import gaussian_measurement


def idx_fixture(path, images):
    arr = np.asarray(images, dtype=np.uint8)
    header = bytes([0, 0, 0x08, 3]) + struct.pack(">3I", *arr.shape)
    path.write_bytes(header + arr.tobytes())
    return path


def test_gen_synthetic():
    a = data.gen_synthetic(100, 1000, 4)
    assert np.array_equal(a, data.gen_synthetic(100, 1000, 4))
    assert np.mean(np.linalg.norm(a, axis=0)) == pytest.approx(10.0, rel=0.05)
    assert data.gen_synthetic(5, 1, 0).shape == (5, 1)
    with pytest.raises(ValueError):
        data.gen_synthetic(0, 3, 0)


def test_measure_noiseless():
    A = gaussian_measurement(3, 6, 0)
    X = data.gen_synthetic(6, 5, 0)
    Y, eps = data.measure(X, A, 0.0, 1)
    assert eps == 0.0 and np.array_equal(Y, A @ X)


def test_measure_noise_level_and_consistency():
    A = gaussian_measurement(25, 100, 0)
    X = data.gen_synthetic(100, 2000, 0)
    Y, eps = data.measure(X, A, 1e-4, 7)
    assert eps == pytest.approx(5e-4, rel=0.2)
    assert np.mean(np.linalg.norm(Y - A @ X, axis=0)) == pytest.approx(eps, rel=1e-9)
    Y2, eps2 = data.measure(X, A, 1e-4, 7)
    assert np.array_equal(Y, Y2) and eps == eps2
    res = data.measure(X, A, 1e-4, 7, per_sample=True)[1]
    assert res.shape == (2000,) and np.mean(res) == pytest.approx(eps)
    with pytest.raises(ValueError):
        data.measure(X[:5], A, 1e-4, 7)


def test_load_idx_fixture(tmp_path):
    imgs = [[[0, 255], [51, 102]], [[255, 0], [0, 255]]]
    p = idx_fixture(tmp_path / "img.idx", imgs)
    X = data.load_idx(p)
    expected = np.array([[0, 1], [1, 0], [0.2, 0], [0.4, 1]])
    assert X.shape == (4, 2)
    assert np.allclose(X, expected, atol=1e-15)
    assert data.load_idx(p).tobytes() == X.tobytes()


def test_load_idx_gzip_and_writer(tmp_path):
    imgs = np.arange(3 * 4 * 4, dtype=np.uint8).reshape(3, 4, 4)
    data.write_idx_images(tmp_path / "a.idx", imgs)
    raw = (tmp_path / "a.idx").read_bytes()
    with gzip.open(tmp_path / "a.idx.gz", "wb") as fh:
        fh.write(raw)
    X = data.load_idx(tmp_path / "a.idx.gz")
    assert X.shape == (16, 3)
    assert np.allclose(X[:, 1] * 255, imgs[1].ravel())


def test_load_idx_errors(tmp_path):
    labels = tmp_path / "labels.idx"
    labels.write_bytes(bytes([0, 0, 0x08, 1]) + struct.pack(">I", 3) + bytes([1, 2, 3]))
    assert np.array_equal(data.load_idx_labels(labels), [1, 2, 3])
    with pytest.raises(data.IdxFormatError, match="magic"):
        data.load_idx(labels)
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x01\x02\x08\x03" + bytes(12))
    with pytest.raises(data.IdxFormatError):
        data.load_idx(bad)
    short = idx_fixture(tmp_path / "short.idx", [[[1, 2], [3, 4]]])
    short.write_bytes(short.read_bytes()[:-1])
    with pytest.raises(data.IdxFormatError, match="payload"):
        data.load_idx(short)
    huge = tmp_path / "huge.idx"
    huge.write_bytes(bytes([0, 0, 0x08, 3]) + struct.pack(">3I", 2 ** 20, 2 ** 10, 2 ** 10))
    with pytest.raises(data.IdxFormatError, match="large"):
        data.load_idx(huge)
    with pytest.raises(data.IdxFormatError):
        data.read_idx(_write(tmp_path / "tiny.idx", b"\x00"))


def _write(path, raw):
    path.write_bytes(raw)
    return path


def test_downsample2():
    X = np.arange(16, dtype=float)[:, None]
    out = data.downsample2(X, 4)
    assert np.allclose(out[:, 0], [2.5, 4.5, 10.5, 12.5])
    with pytest.raises(ValueError):
        data.downsample2(X, 3)


def test_batches_and_split():
    sizes = [len(b) for b in data.batches(10, 4, 0)]
    assert sizes == [4, 4, 2]
    a, b = data.batches(10, 4, 3), data.batches(10, 4, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a)) == list(range(10))
    assert data.split_index(80000, 0.875) == 70000
    ds = data.make_synthetic(2, 1, 80000, 0, 0.0, 0)
    train, test = data.split_and_batch(ds, 0.875, 128, 0)
    assert sum(len(b) for b in train) == 70000 and len(test) == 10000
    assert np.array_equal(test, np.arange(70000, 80000))
    assert len(train[-1]) == 70000 % 128
    with pytest.raises(ValueError):
        data.split_index(10, 1.0)
    with pytest.raises(ValueError):
        data.split_index(1, 0.5)
    with pytest.raises(ValueError):
        data.batches(0, 4, 0)
    with pytest.raises(ValueError):
        data.batches(10, 0, 0)


def test_estimate_bounds_constants():
    X = np.array([[3.0, 0.0], [4.0, 1.0]])
    Y = np.array([[1.0, 2.0]])
    assert data.estimate_bounds_constants(X, Y) == (2.0, 5.0)
    assert data.estimate_bounds_constants(X, 3 * Y)[0] == 6.0
    assert data.estimate_bounds_constants(X[:, :1], Y[:, :1]) == (1.0, 5.0)
    assert data.estimate_bounds_constants(np.zeros((2, 2)), np.zeros((1, 2))) == (0.0, 0.0)
    with pytest.raises(ValueError):
        data.estimate_bounds_constants(np.zeros((2, 0)), np.zeros((1, 0)))


def test_dataset_invariants():
    ds = data.make_synthetic(8, 4, 30, 10, 1e-3, 5)
    X_tr, Y_tr = ds.train()
    assert ds.B_in >= np.max(np.linalg.norm(Y_tr, axis=0))
    assert ds.B_out >= np.max(np.linalg.norm(X_tr, axis=0))
    assert ds.test()[0].shape == (8, 10)
    with pytest.raises(ValueError):
        data.Dataset(ds.X, ds.Y[:, :5], ds.A, 0.0, 0.0, 0, 1.0, 1.0)


def test_dataset_round_trip(tmp_path):
    ds = data.make_synthetic(8, 4, 30, 10, 1e-3, 5)
    data.save_dataset(ds, tmp_path / "ds", {"source": "synthetic"})
    back = data.load_dataset(tmp_path / "ds")
    for a, b in ((ds.X, back.X), (ds.Y, back.Y), (ds.A, back.A)):
        assert a.tobytes() == b.tobytes()
    assert back.eps == ds.eps and back.n_train == 30 and back.extra["source"] == "synthetic"
    assert {p.name for p in (tmp_path / "ds").iterdir()} == {"X.dmat", "Y.dmat", "A.dmat",
                                                              "meta.json"}
