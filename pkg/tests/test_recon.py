import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import lorgeo as L
from artifact import recon as R
from artifact import wavelab as wl


def test_kappa_closed_form_example():
    k = R.kappa_coefficients(1.0, 0.6, 1)
    np.testing.assert_allclose(k.kappa, [1.0, 4.0, -10 / 3, -5 / 3], atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(0.05, 0.95), st.sampled_from([1, -1]))
def test_kappa_matches_linear_solve(r0, vs, sign):
    th = L.interaction_covectors(3, r0, vs, sign)
    if np.allclose(th[0], th[1], atol=1e-6):
        return
    alpha = np.linalg.lstsq(th[1:].T, th[0], rcond=None)[0]
    k = R.kappa_coefficients(r0, vs, sign)
    np.testing.assert_allclose(k.alpha, alpha, rtol=1e-8, atol=1e-8)


def test_kappa_degenerate_branch():
    with pytest.raises(L.DegeneracyError):
        R.kappa_coefficients(0.0, 0.6, 1)


def test_richardson_exact_for_first_order_tail():
    rhos = [50, 100, 200, 400]
    vals = [2.0 + 1j + (3 - 2j) / r for r in rhos]
    v, res = R.richardson(rhos, vals)
    assert abs(v - (2 + 1j)) <= 1e-13 and res <= 1e-13


def test_bump_potential_matches_box():
    m = L.minkowski(2)
    beta, q = R.bump_potential([1.0, 0.0, 0.0], 0.6, 0.3)
    X = np.array([[1.0, 0.1, 0.0], [1.1, -0.1, 0.2], [0.9, 0.0, -0.3]])
    ref = -np.exp(beta(X)) * wl.box_fd(m, lambda Y: np.exp(-beta(Y)), X, h=1e-3)
    np.testing.assert_allclose(q(X), ref, rtol=1e-4)


def test_interaction_phase_is_stationary_at_q0():
    m = L.minkowski(2, T=2.0)
    s = R.build_interaction_setup(m, [1.0, 0.0, 0.0])
    h = 1e-5
    E = np.eye(3) * h
    S = lambda P: s.beam_values(np.atleast_2d(P), 1.0)[0]
    assert abs(S(s.q0)[0]) <= 1e-14
    grad = np.array([(S(s.q0 + e)[0] - S(s.q0 - e)[0]) / (2 * h) for e in E])
    assert np.max(np.abs(grad)) <= 1e-8
    assert np.min(np.linalg.eigvalsh(R.phase_hessian(s).imag)) > 0


def test_interaction_integral_resolution_guard():
    m = L.minkowski(2, T=2.0)
    s = R.build_interaction_setup(m, [1.0, 0.0, 0.0])
    with pytest.raises(Exception, match="cells"):
        R.interaction_integral(s, lambda X: 1.0, 50.0, R.QuadratureGrid(5.0, 11))


def test_detect_arrival_synthetic():
    t = np.linspace(0, 1, 1001)
    trace = wl.smooth_pulse(0.5, 0.1)(t)
    td = R.detect_arrival(trace, t)
    assert 0.5 <= td <= 0.53
    assert R.detect_arrival(np.zeros_like(t), t) is None


def test_ray_transform_without_potential_is_zero():
    rt = R.ray_transform_q(L.minkowski(2, T=2.0), [0.0, -0.5, 0.0], [1.0, 1.0, 0.0], None)
    smp = rt.sample(0.5, lambda X: 0.0 * X[..., 0])
    assert smp.weighted == 0 and smp.unweighted == 0


def test_ray_transform_recovers_bump():
    q = lambda X: np.exp(-np.sum((np.asarray(X) - [0.5, 0.0, 0.0]) ** 2, axis=-1) / 0.04)
    rt = R.ray_transform_q(L.minkowski(2, T=2.0), [0.0, -0.5, 0.0], [1.0, 1.0, 0.0], q)
    smp = rt.sample(0.5, q)
    assert abs(smp.weighted - smp.weighted_quadrature) <= 1e-8
    assert abs(smp.unweighted - smp.unweighted_quadrature) <= 1e-8
    truth = q(rt.chart.gamma(np.array([0.5]))[0])
    assert abs(rt.recover_q(0.5) - truth) <= 1e-3


def test_observation_pulses_start_at_entry():
    m = L.minkowski(1, T=1.45)
    fs, srcs = R.interaction_pulses(m, [0.7, 0.5], 0.1)
    for fl, s in zip(fs, srcs):
        f = fl[s.entry_face]
        assert f(s.entry[0]) == 0 and f(s.entry[0] + 0.05) > 0
