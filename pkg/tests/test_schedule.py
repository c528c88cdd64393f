import numpy as np
import pytest

from deconet.schedule import (
    Schedule, build_acf, build_acf_theta, build_constant, build_geometric, c_arrays, c_coeffs,
    check_assumptions, schedule_from_dict, theta_prime,
)


def test_theta_prime():
    r = np.sqrt(0.1)
    assert theta_prime(100, 1000) == pytest.approx((1 - r) / (1 + r), abs=1e-15)
    with pytest.raises(ValueError):
        theta_prime(100, 100)


def test_geometric_schedule():
    s = build_geometric(5, 100.0, 0.9, 0.8)
    assert s.t1[0] == s.t2[0] == s.theta[0] == 1.0
    assert s.t1[2] == pytest.approx(0.81)
    assert s.t2[2] == pytest.approx(0.64)
    assert len(s.theta) == 6
    with pytest.raises(ValueError):
        s.theta[1] = 0.3


def test_acf_theta_recursion():
    th = build_acf_theta(50)
    assert th[1] == pytest.approx(2 / (1 + np.sqrt(5)), abs=1e-15)
    assert th[1] == pytest.approx(0.618034, abs=1e-6)
    assert np.all(np.diff(th) < 0)
    assert np.all((th > 0) & (th <= 1))


def test_schedule_validation():
    with pytest.raises(ValueError):
        build_geometric(0)
    with pytest.raises(ValueError):
        build_constant(3, mu=1.0)
    with pytest.raises(ValueError):
        Schedule(10.0, 2, [1, 0.5, 0.5], [1, 0.5, 0.5], [1, 1.2, 1])
    with pytest.raises(ValueError):
        Schedule(10.0, 2, [0.9, 0.5, 0.5], [1, 0.5, 0.5], [1, 1, 1])


def test_c_coeffs():
    s = build_geometric(4, 100.0)
    assert c_coeffs(s, 0) == pytest.approx((0.01, 0.01))
    assert c_coeffs(s, -1) == (0.0, 0.0)
    with pytest.raises(IndexError):
        c_coeffs(s, 5)
    tp = theta_prime(100, 1000)
    flat = build_geometric(4, 100.0, tp, tp)
    c1, c2 = c_arrays(flat)
    assert np.allclose(c1, 0.01) and np.allclose(c2, 0.01)


def test_check_assumptions():
    s = build_geometric(1, 100.0)
    rep = check_assumptions(s, 1.4, 2.0)
    assert rep.per_layer[0] and rep.holds
    bad = check_assumptions(build_constant(3, 1.01), 20.0, 1.0)
    assert not bad.holds
    assert np.all(bad.c1_lambda_sq > 1)
    assert check_assumptions(s, 0.0, 0.0).holds


def test_schedule_dict_round_trip():
    for s in (build_geometric(3, 50.0, 0.7, 0.6, 500.0), build_acf(4, 10.0), build_constant(2)):
        back = schedule_from_dict(s.to_dict())
        assert np.array_equal(back.theta, s.theta) and np.array_equal(back.t1, s.t1)
        assert back.mu == s.mu and back.L == s.L


@pytest.mark.parametrize("alpha, beta", [(0.3, 0.5), (0.5194, 0.1), (0.45, 0.45)])
def test_c_coeffs_nonincreasing_below_theta_prime(alpha, beta):
    s = build_geometric(20, 100.0, alpha, beta)
    c1, c2 = c_arrays(s)
    assert np.all(np.diff(c1) <= 1e-15) and np.all(np.diff(c2) <= 1e-15)
