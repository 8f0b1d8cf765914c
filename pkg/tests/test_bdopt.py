import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import bdopt as BD
from artifact import lorgeo as L


def _chart(n=2, alpha=(1.0, 0.3, 0.1, 0.2), c=(1.0, 0.2, 0.0)):
    return BD.StaticProfileChart(L.static_profile(n, alpha=list(alpha), c=list(c)))


def test_static_chart_boundary_values():
    ch = _chart()
    np.testing.assert_allclose(ch.Gi(np.array([0.5, 0.5]), 0.0), np.diag([-1 / 1.1, 1.0]), atol=1e-15)
    # dx1/dxn = c(x1) = 1 + 0.2 x1, so x1 = 5 (exp(0.2 xn) - 1)
    assert ch.x1(0.1) == pytest.approx(5 * (math.exp(0.02) - 1), rel=1e-12)


def test_xi_normal_flat():
    ch = _chart(alpha=(1.0, 0, 0, 0), c=(1.0, 0, 0))
    bc = BD.BoundaryCovector((0.5, 0.5), (-1.0, 0.3))
    assert BD.xi_normal(ch, bc) == pytest.approx(-math.sqrt(1 - 0.09), abs=1e-15)


def test_xi_normal_errors():
    ch = _chart()
    with pytest.raises(BD.CausalityError):
        BD.xi_normal(ch, BD.BoundaryCovector((0.5, 0.5), (-0.5, 1.0)))
    with pytest.raises(L.PreconditionError):
        BD.xi_normal(ch, BD.BoundaryCovector((0.5, 0.5), (1.0, 0.1)))


def test_eikonal_and_transport_identities():
    ch = _chart()
    jet = BD.go_boundary_data(ch, BD.BoundaryCovector((0.5, 0.5), (-1.0, 0.3)))
    assert jet.eikonal_residual(ch) <= 1e-10
    assert BD.eikonal_boundary_identity(ch, jet) <= 1e-8
    assert BD.transport_boundary_identity(ch, jet) <= 1e-6


@settings(max_examples=6, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.2, 0.2), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_round_trip_1p2(a1, a3, c1, c2):
    ch = _chart(2, alpha=(1.0, a1, 0.1, a3), c=(1.0, c1, c2))
    y0 = np.array([0.5, 0.5])
    r = BD.recovery_round_trip(ch, y0, BD.covector_fan(2, 10))
    np.testing.assert_allclose(r["G"].value, ch.Gi(y0, 0.0), atol=1e-8)
    np.testing.assert_allclose(r["normal"]["dGi"], ch.dGi_n(y0, 0.0), atol=1e-6)


def test_round_trip_1p1():
    ch = _chart(1, alpha=(1.0, 0.3, 0.1, 0.0), c=(1.0, 0.2, 0.0))
    y0 = np.array([0.5])
    r = BD.recovery_round_trip(ch, y0, BD.covector_fan(1, 10))
    np.testing.assert_allclose(r["G"].value, ch.Gi(y0, 0.0), atol=1e-8)
    np.testing.assert_allclose(r["normal"]["dGi"], ch.dGi_n(y0, 0.0), atol=1e-6)


def test_dGi_n_matches_finite_difference():
    ch = _chart()
    y0 = np.array([0.5, 0.5])
    h = 1e-5
    fd = (-3 * ch.Gi(y0, 0.0) + 4 * ch.Gi(y0, h) - ch.Gi(y0, 2 * h)) / (2 * h)
    np.testing.assert_allclose(ch.dGi_n(y0, 0.0), fd, atol=1e-6)


def test_too_few_covectors():
    ch = _chart()
    with pytest.raises(BD.ConditioningError):
        BD.recovery_round_trip(ch, np.array([0.5, 0.5]), BD.covector_fan(2, 2))


def test_covector_fan_is_seeded_and_timelike():
    a, b = BD.covector_fan(2, 10, seed=3), BD.covector_fan(2, 10, seed=3)
    np.testing.assert_array_equal(np.array(a), np.array(b))
    for xi in a:
        assert xi[0] < 0 and abs(xi[1]) < abs(xi[0])
