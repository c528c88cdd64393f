import numpy as np
import pytest
from hypothesis import given, strategies as st

from deconet.linalg import spectral_value
from deconet.operators import (
    AnalysisOperator, build_operator, finite_difference, haar_redundant, init_learnable,
    soft_threshold, soft_threshold_grad, truncate, truncate_grad,
)


@pytest.mark.parametrize("x, out", [(3.0, 2.0), (-0.5, 0.0), (-3.0, -2.0)])
def test_soft_threshold(x, out):
    assert soft_threshold(x, 1.0) == out


@pytest.mark.parametrize("x, out", [(3.0, 1.0), (0.5, 0.0), (1.0, 0.0)])
def test_soft_threshold_grad(x, out):
    assert soft_threshold_grad(x, 1.0) == out


@pytest.mark.parametrize("x, out", [(3.0, 1.0), (0.5, 0.5), (-3.0, -1.0)])
def test_truncate(x, out):
    assert truncate(x, 1.0) == out


@pytest.mark.parametrize("x, out", [(0.5, 1.0), (3.0, 0.0), (-1.0, 0.0)])
def test_truncate_grad(x, out):
    assert truncate_grad(x, 1.0) == out


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(finite, st.floats(0, 1e3))
def test_soft_plus_truncate_is_identity(x, tau):
    assert soft_threshold(x, tau) + truncate(x, tau) == pytest.approx(x, rel=1e-12, abs=1e-9)


@given(finite, finite, st.floats(0, 1e3))
def test_thresholds_are_one_lipschitz(x, y, tau):
    assert abs(soft_threshold(x, tau) - soft_threshold(y, tau)) <= abs(x - y) * (1 + 1e-12) + 1e-9
    assert abs(truncate(x, tau) - truncate(y, tau)) <= abs(x - y) * (1 + 1e-12) + 1e-9


def test_haar_n2_rows():
    r = 1 / np.sqrt(2)
    expected = r * np.array([[1, 1], [1, 1], [1, -1], [-1, 1]])
    assert np.allclose(haar_redundant(2).W, expected)


def test_haar_tight_frame_and_constants():
    W = haar_redundant(8).W
    assert np.allclose(W.T @ W, 2 * np.eye(8))
    assert spectral_value(W) == pytest.approx(np.sqrt(2), rel=1e-9)
    assert np.allclose(W[8:] @ np.ones(8), 0)


def test_finite_difference():
    W = finite_difference(3).W
    assert np.allclose(W @ np.array([1.0, 2.0, 4.0]), [1.0, 2.0, -3.0])
    assert np.allclose(finite_difference(8).W @ np.ones(8), 0)
    expected = 2 * np.sin(np.pi * 4 / 8)
    assert spectral_value(finite_difference(8).W) == pytest.approx(expected, rel=1e-9)


def test_init_learnable():
    a = init_learnable(100, 500, seed=3).W
    assert np.array_equal(a, init_learnable(100, 500, seed=3).W)
    big = init_learnable(100, 1000, seed=0).W
    assert big.var() == pytest.approx(1 / 100, rel=0.1)
    b = init_learnable(10, 20, "beta", seed=1, a=2, b=2).W
    raw = b * np.sqrt(10) + 0.5
    assert raw.min() >= 0 and raw.max() <= 1
    with pytest.raises(ValueError):
        init_learnable(10, 10)
    with pytest.raises(ValueError):
        init_learnable(10, 20, "uniform")


def test_operator_requires_redundancy():
    with pytest.raises(ValueError, match="redundant"):
        AnalysisOperator("learnable", np.eye(3))
    AnalysisOperator("finite_difference", np.eye(3))


def test_operator_save_load(tmp_path):
    op = init_learnable(6, 9, "beta", seed=4)
    op.save(tmp_path / "W.dmat")
    back = AnalysisOperator.load(tmp_path / "W.dmat")
    assert back.kind == "learnable" and back.params == op.params
    assert np.array_equal(back.W, op.W)
    assert (tmp_path / "W.dmat.json").exists()


def test_build_operator_aliases():
    assert build_operator("tv", 5).kind == "finite_difference"
    assert build_operator("haar", 5).N == 10
    with pytest.raises(ValueError):
        build_operator("curvelet", 5)
