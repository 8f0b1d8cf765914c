import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import lorgeo as L
from artifact import wavelab as wl

M1 = L.minkowski(1, T=1.0)


def _dpulse(t, t0, width):
    r = (t - t0 - 0.5 * width) / (0.5 * width)
    inside = np.abs(r) < 1
    rr = np.where(inside, r, 0.0)
    one = 1 - rr * rr
    return np.where(inside, np.exp(1 - 1 / one) * (-2 * rr / one**2) / (0.5 * width), 0.0)


def test_cfl_violation_cites_bound():
    with pytest.raises(wl.ConfigError, match=r"dt <= 0\.9 h / c_max"):
        wl.make_grid(M1, 0.01, 1.0, dt=0.02)


def test_cfl_uses_characteristic_speed():
    m = L.static_profile(1, c=[2.0, 0.0, 0.0])
    g = wl.make_grid(m, 0.01, 1.0, cfl=0.5)
    assert g.dt <= 0.5 * 0.01 / 2.0 + 1e-15


def test_grid_must_divide_interval():
    with pytest.raises(wl.ConfigError):
        wl.make_grid(M1, 0.3, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.05, 0.5), st.floats(-3, 3))
def test_smooth_pulse_support(t0, width, amp):
    f = wl.smooth_pulse(t0, width, amp)
    t = np.linspace(-1, 2, 301)
    v = f(t)
    assert np.all(v[(t <= t0) | (t >= t0 + width)] == 0)
    assert f(t0 + 0.5 * width) == pytest.approx(amp)


def test_zero_data_gives_zero_output():
    _, d = wl.solve_semilinear(M1, None, 1.0, [None, None], wl.make_grid(M1, 0.02, 1.0))
    assert np.all(d.neumann == 0)


def test_travelling_wave_second_order():
    m = L.minkowski(1, T=1.5)
    f = wl.smooth_pulse(0.1, 0.6)
    errs = []
    hs = [0.02, 0.01, 0.005]
    for h in hs:
        g = wl.make_grid(m, h, 1.5)
        _, d = wl.solve_linear(m, None, None, [f, None], g)
        errs.append(wl.relative_l2(d.neumann[0], _dpulse(d.t, 0.1, 0.6)))
    assert wl.fitted_order(hs, errs) >= 1.8


def test_energy_conserved_after_forcing():
    m = L.minkowski(1, T=1.5)
    g = wl.make_grid(m, 0.01, 1.5)
    wf, _ = wl.solve_linear(m, None, None, [wl.smooth_pulse(0.0, 0.3), None], g, store=True)
    t = g.t
    E = [wl.discrete_energy(m, g, wf.u[k - 1], wf.u[k], t[k]) for k in range(len(t)) if t[k] > 0.35]
    assert E[0] > 0
    assert np.max(np.abs(np.array(E) - E[0])) <= 1e-10 * E[0]


def test_linearization_consistent_and_independent_of_a():
    m = L.minkowski(1, T=1.0)
    g = wl.make_grid(m, 0.02, 1.0)
    f = [wl.smooth_pulse(0.0, 0.3), None]
    d1 = wl.dn_linearized(m, None, 1.0, f, g, eps=1e-4)
    d2 = wl.dn_linearized(m, None, 5.0, f, g, eps=1e-4)
    scale = np.max(np.abs(d1.neumann))
    assert np.max(np.abs(d1.neumann - d2.neumann)) <= 1e-10 * scale


def test_blowup_raises_divergence():
    m = L.minkowski(1, T=1.0)
    g = wl.make_grid(m, 0.02, 1.0)
    with pytest.raises(wl.DivergenceError):
        wl.solve_semilinear(m, None, -50.0, [wl.smooth_pulse(0.0, 0.4, 20.0), None], g)


def test_stencil_matches_cascade_coarse():
    m = L.minkowski(1, T=1.5)
    g = wl.make_grid(m, 0.01, 1.5)
    p = wl.smooth_pulse
    fs = [[p(0.0, 0.3), None], [p(0.1, 0.3), None], [None, p(0.0, 0.3)], [None, p(0.1, 0.3)]]
    a = lambda X: 1.0 + 0.5 * X[..., 1]
    st_ = wl.dn_fourth_mixed(m, None, a, fs, g, eps=0.05)
    cas = wl.cascade_fourth(m, None, a, fs, g)
    assert wl.relative_l2(st_.neumann, cas.neumann) <= 1e-2
    unit = wl.cascade_fourth(m, None, a, fs, g, factor=1.0)
    assert wl.factor_regression(st_, unit) == pytest.approx(-24.0, abs=0.5)


def test_diffeo_requires_identity_near_boundary():
    g = wl.make_grid(M1, 0.02, 1.0)
    with pytest.raises(L.PreconditionError):
        wl.diffeo_invariance_check(M1, 1.0, wl.TimeShift(0.1, 1.0), [wl.smooth_pulse(0.0, 0.3), None], g)


def test_diffeo_jacobian_matches_finite_difference():
    psi = wl.Diffeo(0.05, (0.5, 0.5), 0.3)
    X = np.array([0.45, 0.55])
    h = 1e-6
    fd = np.column_stack([(psi.psi(X + h * e) - psi.psi(X - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(psi.dpsi(X), fd, atol=1e-8)


def test_travelling_beta_solves_wave_equation():
    beta = wl.travelling_beta()
    X = np.array([[0.3, 0.5], [0.4, 0.6], [0.2, 0.45]])
    box = wl.box_fd(M1, lambda Y: np.exp(-beta(Y)[0]), X, h=1e-3)
    assert np.max(np.abs(box)) <= 1e-6
    b, db, d2b = beta(X)
    h = 1e-6
    fd = np.column_stack([(beta(X + h * e)[0] - beta(X - h * e)[0]) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(db, fd, atol=1e-7)


def test_conformal_check_rejects_non_wave_beta():
    g = wl.make_grid(M1, 0.02, 1.0)
    bump = lambda X: L.bump_jets(X, 0.1, (0.5, 0.5), 0.3)
    with pytest.raises(L.PreconditionError):
        wl.conformal_invariance_check(M1, 1.0, bump, [wl.smooth_pulse(0.0, 0.3), None], g)


@pytest.mark.parametrize("d", [2, 3])
def test_conformal_identity(d):
    m = L.minkowski(d - 1, T=2.0)
    c = [0.5] + [0.1] * (d - 1)
    beta = lambda X: L.bump_jets(X, 0.2, c, 0.6)
    v = lambda X: np.sin(X[..., 0] + 0.3 * X[..., 1]) + X[..., -1] ** 2
    X = np.array([c, [0.6] + [0.0] * (d - 1)])
    tol = 1e-9 if d == 2 else 1e-4
    assert wl.conformal_identity_residual(m, beta, v, X) <= tol


def test_fitted_order_and_relative_l2():
    hs = np.array([0.1, 0.05, 0.025])
    assert wl.fitted_order(hs, 3 * hs**2) == pytest.approx(2.0, abs=1e-12)
    assert wl.relative_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert wl.relative_l2([0.0, 0.0], [0.0, 0.0]) == 0.0


def test_scattering_control_zero_pulse():
    m = L.minkowski(1, T=1.0)
    g = wl.make_grid(m, 0.02, 1.0)
    r = wl.scattering_control(m, lambda t: 0.0 * np.asarray(t), g)
    assert r.passes == 0 and np.all(r.f_exit == 0)
