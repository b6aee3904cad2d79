"""The wave-map nonlinearity, its linearization and the perturbation remainder."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wmblowup.core import StatePair
from wmblowup.errors import DomainError
from wmblowup.physics import (
    NonlinearityContext, N_perturbation, gamma, gamma_over_cube, gamma_ppp, gamma_prime, n0,
    n0_derivative, potential_V,
)
from wmblowup.profiles import phi

CTX = NonlinearityContext(5)
XI = np.linspace(0.0, 3.0, 61)


def test_gamma_closed_forms():
    assert gamma(0.0) == 0.0 and gamma_prime(0.0) == 0.0
    assert float(gamma(np.pi / 2)) == pytest.approx(np.pi, abs=1e-12)
    assert float(gamma_ppp(0.0)) == 8.0
    assert float(gamma_over_cube(1e-5)) == pytest.approx(4 / 3, abs=1e-9)


def test_gamma_over_cube_branch_switch():
    y = np.array([np.nextafter(0.25, 0.0), 0.25])
    v = gamma_over_cube(y)
    assert abs(v[0] - v[1]) < 1e-14


def test_gamma_over_cube_series_accuracy():
    from mpmath import mp, mpf, sin

    mp.dps = 40
    for y in (0.01, 0.1, 0.2, 0.2499):
        exact = float((2 * mpf(y) - sin(2 * mpf(y))) / mpf(y) ** 3)
        assert float(gamma_over_cube(y)) == pytest.approx(exact, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3))
def test_gamma_odd_and_monotone(y):
    assert float(gamma(-y)) == -float(gamma(y))
    assert float(gamma_prime(y)) >= 0.0


def test_gamma_derivatives_finite_difference():
    h = 1e-5
    for y in (0.3, 1.1, 2.7):
        fd = (gamma(y + h) - gamma(y - h)) / (2 * h)
        assert float(fd) == pytest.approx(float(gamma_prime(y)), abs=1e-8)
        fd3 = (gamma_prime(y + h) - 2 * gamma_prime(y) + gamma_prime(y - h)) / h**2
        assert float(fd3) == pytest.approx(float(gamma_ppp(y)), abs=1e-4)


def test_n0_trivial_values():
    r = np.linspace(0.1, 2, 5)
    assert np.all(n0(np.zeros(5), r, CTX) == 0)
    assert float(n0(np.array([1.0]), np.array([0.0]), CTX)[0]) == pytest.approx(4 / 3, abs=1e-14)


def test_n0_direct_formula():
    r = np.array([0.5, 1.0, 2.0])
    u = np.array([1.0, -0.7, 0.9])
    direct = (5 - 3) / (2 * r**3) * gamma(r * u)
    assert np.allclose(n0(u, r, CTX), direct, rtol=1e-13)


def test_context_validation():
    with pytest.raises(DomainError):
        NonlinearityContext(3)
    with pytest.raises(DomainError):
        NonlinearityContext(5, taylor_threshold=0.6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-2, 2)),
       arrays(np.float64, 16, elements=st.floats(-2, 2)))
def test_n0_locally_lipschitz(u, v):
    r = np.linspace(0.05, 4.0, 16)
    # |d n0/du| = 2(n-3) u^2 sinc^2 <= 4 * 2^2 on |u| <= 2
    lip = 16.0
    lhs = np.max(np.abs(n0(u, r, CTX) - n0(v, r, CTX)))
    assert lhs <= lip * np.max(np.abs(u - v)) * (1 + 1e-12) + 1e-14


def test_n0_derivative_finite_difference():
    r = np.linspace(0.0, 3, 31)
    u = np.cos(r)
    h = 1e-6
    fd = (n0(u + h, r, CTX) - n0(u - h, r, CTX)) / (2 * h)
    assert np.allclose(fd, n0_derivative(u, r, CTX), atol=1e-7)


def test_potential_values():
    assert float(potential_V(0.0, 5)) == 16.0
    assert float(potential_V(1.0, 5)) == 4.0
    assert float(potential_V(3.0, 6)) == pytest.approx(48 / 121, abs=1e-15)
    with pytest.raises(DomainError):
        potential_V(1.0, 4)


def test_potential_is_linearization_at_profile():
    """Derived oracle: centred difference of n0 at Phi, eps = 1e-6."""
    P = phi(XI)
    K = np.sin(3 * XI) + 0.5
    eps = 1e-6
    fd = (n0(P + eps * K, XI, CTX) - n0(P - eps * K, XI, CTX)) / (2 * eps)
    assert np.max(np.abs(fd - potential_V(XI, 5) * K)) < 1e-6


def test_perturbation_zero_and_identity():
    """Derived oracle: N(K) against the direct difference n0(Phi + K) - n0(Phi) - V K."""
    assert np.all(N_perturbation(np.zeros_like(XI), XI, CTX) == 0)
    P = phi(XI)
    K = 0.3 * np.cos(XI)
    direct = n0(P + K, XI, CTX) - n0(P, XI, CTX) - potential_V(XI, 5) * K
    assert np.max(np.abs(N_perturbation(K, XI, CTX) - direct)) < 1e-10


def test_perturbation_statepair():
    K = StatePair(0.1 * np.ones_like(XI), np.ones_like(XI))
    out = N_perturbation(K, XI, CTX)
    assert np.all(out.u == 0)
    assert np.allclose(out.u_hat, N_perturbation(K.u, XI, CTX))


def test_perturbation_is_quadratic(rng):
    K = rng.standard_normal(XI.size)
    ratios = [np.max(np.abs(N_perturbation(e * K, XI, CTX))) / e**2 for e in (1e-2, 1e-3, 1e-4)]
    assert max(ratios) / min(ratios) < 1.1
    assert max(ratios) < 1e3
