import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact._poly import PolySpace

coef = st.floats(-2, 2, allow_nan=False)


def _rand(P, rng):
    return rng.standard_normal(P.size) + 1j * rng.standard_normal(P.size)


def test_monomial_count():
    # number of monomials of degree <= D in nv variables is C(nv + D, D)
    from math import comb
    for nv, D in [(1, 5), (2, 4), (3, 3), (4, 2)]:
        assert PolySpace(nv, D).size == comb(nv + D, D)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_product_matches_pointwise_for_low_degree(seed):
    rng = np.random.default_rng(seed)
    P = PolySpace(2, 4)
    a = P.truncate(_rand(P, rng), 2)
    b = P.truncate(_rand(P, rng), 2)
    X = rng.uniform(-1, 1, (7, 2))
    np.testing.assert_allclose(P.eval(P.mul(a, b), X), P.eval(a, X) * P.eval(b, X), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(coef, coef, coef)
def test_derivative_of_quadratic(c0, c1, c2):
    P = PolySpace(2, 3)
    a = P.quadratic(np.array([[c0, c1], [c1, c2]]))
    X = np.array([[0.3, -0.7]])
    # d/dx0 of c0 x0^2 + 2 c1 x0 x1 + c2 x1^2
    np.testing.assert_allclose(P.eval(P.deriv(a, 0), X), 2 * c0 * 0.3 + 2 * c1 * -0.7, atol=1e-12)


def test_integrate_inverts_derivative():
    rng = np.random.default_rng(0)
    P = PolySpace(3, 4)
    a = P.truncate(_rand(P, rng), 3)
    for v in range(3):
        back = P.deriv(P.integrate(a, v), v)
        np.testing.assert_allclose(back, a, atol=1e-12)


def test_reciprocal_is_series_inverse():
    rng = np.random.default_rng(1)
    P = PolySpace(2, 5)
    a = _rand(P, rng)
    a[0] = 2.0
    np.testing.assert_allclose(P.mul(a, P.reciprocal(a)), P.const(1.0), atol=1e-10)


def test_compose_affine_matches_evaluation():
    rng = np.random.default_rng(2)
    P = PolySpace(2, 3)
    a = _rand(P, rng)
    A = rng.standard_normal((2, 2))
    x0 = np.array([0.1, -0.2])
    b = P.compose_affine(a, A, x0)
    Y = rng.uniform(-0.5, 0.5, (5, 2))
    np.testing.assert_allclose(P.eval(b, Y), P.eval(a, x0 + Y @ A.T), rtol=1e-12)


def test_reciprocal_rejects_zero_constant():
    P = PolySpace(1, 3)
    with pytest.raises(ZeroDivisionError):
        P.reciprocal(P.var(0))
