import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import lorgeo as L
from artifact.bdopt import StaticProfileChart


def test_make_metric_rejects_unknown_preset():
    with pytest.raises(KeyError):
        L.make_metric("nope")


def test_make_metric_builds_domains_from_dicts():
    m = L.make_metric("minkowski", n=1, N={"kind": "interval", "lo": [0.0], "hi": [2.0]},
                      N1={"kind": "interval", "lo": [-1.0], "hi": [3.0]})
    assert m.N.hi[0] == 2.0


def test_minkowski_flat_tensors():
    m = L.minkowski(2)
    X = np.array([0.5, 0.1, 0.2])
    np.testing.assert_array_equal(L.metric_at(m, X), np.diag([-1.0, 1.0, 1.0]))
    assert np.all(L.christoffel_at(m, X) == 0)
    assert np.all(L.riemann_at(m, X) == 0)


def test_christoffel_matches_finite_differences():
    m = L.conformal_bump(2, amp=0.2, center=[0.5, 0.1, 0.0], width=0.5)
    X = np.array([0.55, 0.2, -0.1])
    h = 1e-5
    dg = np.array([(m.g(X + h * e) - m.g(X - h * e)) / (2 * h) for e in np.eye(3)])
    low = 0.5 * (np.einsum("jlk->ljk", dg) + np.einsum("klj->ljk", dg) - dg)
    ref = np.einsum("il,ljk->ijk", np.linalg.inv(m.g(X)), low)
    np.testing.assert_allclose(L.christoffel_at(m, X), ref, atol=1e-8)


def test_riemann_conformally_flat_2d():
    # g = exp(2b) eta in 1+1: R_0101 = exp(2b) (-b_tt + b_xx)
    c, w, amp = [0.5, 0.5], 0.4, 0.2
    m = L.conformal_bump(1, amp=amp, center=c, width=w)
    for X in ([0.55, 0.42], [0.4, 0.6]):
        X = np.array(X)
        b, _, d2b = L.bump_jets(X[None], amp, c, w)
        ref = math.exp(2 * b[0]) * (-d2b[0, 0, 0] + d2b[0, 1, 1])
        assert L.riemann_at(m, X)[0, 1, 0, 1] == pytest.approx(ref, rel=1e-12)


def test_riemann_symmetries():
    m = L.conformal_bump(2, amp=0.2, center=[0.5, 0.1, 0.0], width=0.5)
    R = L.riemann_at(m, np.array([0.5, 0.2, -0.1]))
    np.testing.assert_allclose(R, -np.swapaxes(R, 0, 1), atol=1e-12)
    np.testing.assert_allclose(R, np.einsum("abcd->cdab", R), atol=1e-12)
    bianchi = R + np.einsum("abcd->acdb", R) + np.einsum("abcd->adbc", R)
    np.testing.assert_allclose(bianchi, 0, atol=1e-12)


def test_causal_class():
    m = L.minkowski(1)
    X = [0.5, 0.5]
    assert L.causal_class(m, X, [1, 1]) == "null"
    assert L.causal_class(m, X, [1, 0.5]) == "timelike"
    assert L.causal_class(m, X, [0.5, 1]) == "spacelike"


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * math.pi))
def test_flat_geodesic_is_straight_and_null(angle):
    m = L.minkowski(2, T=4.0)
    v = np.array([1.0, math.cos(angle), math.sin(angle)])
    geo = L.integrate_null_geodesic(m, [0.1, 0.0, 0.0], v, "transmit", s_max=0.8)
    S = geo.samples()
    np.testing.assert_allclose(S[:, 1:4], np.array([0.1, 0.0, 0.0]) + S[:, :1] * v, atol=1e-10)
    assert geo.max_null_drift(m) <= 1e-9


def test_reflection_mirror_law_on_interval():
    m = L.minkowski(1, T=4.0)
    geo = L.integrate_null_geodesic(m, [0.0, 0.5], [1.0, 1.0], "reflect", s_max=1.2)
    refl = [e for e in geo.contacts if e.kind == "reflect"]
    assert refl and refl[0].point[0] == pytest.approx(0.5, abs=1e-10)
    np.testing.assert_allclose(refl[0].v_out, [1.0, -1.0], atol=1e-10)


def test_reflect_velocity_preserves_null_and_flips_normal():
    m = L.minkowski(2)
    b = np.array([0.5, 1.0, 0.0])
    v = np.array([1.0, 0.6, 0.8])
    w = L.reflect_velocity(m, b, v, domain=m.N)
    np.testing.assert_allclose(w, [1.0, -0.6, 0.8], atol=1e-14)


def test_lens_geodesic_stays_null():
    m = L.lens()
    v = L.null_vector(m, [0.0, -1.2, 0.1], [1.0, 0.0])
    geo = L.integrate_null_geodesic(m, [0.0, -1.2, 0.1], v, "transmit", s_max=10.0)
    assert geo.max_null_drift(m) <= 1e-8


def test_transit_classes():
    m = L.minkowski(2, T=4.0)
    io = L.classify_transit(m, [0.2, -1.3, 0.0], [1.0, 1.0, 0.0])
    assert io.cls == "IO"
    assert io.t0 == pytest.approx(0.3, abs=1e-9) and io.t1 == pytest.approx(2.3, abs=1e-9)
    miss = L.classify_transit(m, [0.2, -0.5, 1.2], [1.0, 1.0, 0.0])
    assert miss.cls == "NoEntry"
    short = L.minkowski(2, T=1.0)
    assert L.classify_transit(short, [0.2, -1.3, 0.0], [1.0, 1.0, 0.0]).cls == "I"


def test_rejects_non_null_initial_velocity():
    with pytest.raises(L.PreconditionError):
        L.integrate_null_geodesic(L.minkowski(1), [0.1, 0.5], [1.0, 0.5])


def test_earliest_observation_set_flat_1d():
    m = L.minkowski(1, T=2.0)
    hits = L.earliest_observation_set(m, [0.5, 0.3])
    by_face = {h.face: h.point[0] for h in hits if not h.censored}
    assert by_face[0] == pytest.approx(0.8, abs=1e-9)
    assert by_face[1] == pytest.approx(1.2, abs=1e-9)


def test_boundary_normal_chart_matches_static_profile():
    m = L.static_profile(1, alpha=[1.0, 0.3, 0.1, 0.0], c=[1.0, 0.2, 0.0])
    ch = L.boundary_normal_chart(m, 0, 0.2, patch=[np.array([1.0])])
    ref = StaticProfileChart(m, depth=0.2)
    for xn in (0.0, 0.1, 0.2):
        Gi = np.linalg.inv(ch.metric_at([1.0], xn))
        np.testing.assert_allclose(Gi[0, 0], ref.Gi(np.array([1.0]), xn)[0, 0], atol=1e-9)
        np.testing.assert_allclose([Gi[1, 1], Gi[0, 1]], [1.0, 0.0], atol=1e-9)


@pytest.mark.parametrize("sign", [1, -1])
def test_interaction_covectors_are_past_null(sign):
    th = L.interaction_covectors(3, 0.4, 0.6, sign)
    eta = np.diag([-1.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(np.einsum("ji,ik,jk->j", th, eta, th), 0, atol=1e-14)
    assert np.all(th[:, 0] < 0)


def test_degenerate_varsigma_rejected():
    with pytest.raises(L.DegeneracyError):
        L.interaction_covectors(2, 1.0, 0.0)


def test_interaction_sources_hit_q0():
    m = L.minkowski(1, T=2.0)
    q0 = np.array([0.7, 0.5])
    for s in L.choose_interaction_sources(m, q0, 0.5, require_positive_time=False):
        # the ray from z along zeta passes through q0
        lam = (q0[0] - s.z[0]) / s.zeta[0]
        np.testing.assert_allclose(s.z + lam * s.zeta, q0, atol=1e-9)
        assert s.entry_face in (0, 1)
