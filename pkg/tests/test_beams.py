import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from artifact import beams as B
from artifact import lorgeo as L


def test_null_frame_normal_form():
    m = L.minkowski(2)
    X = np.array([0.5, 0.1, 0.2])
    ch = B.NullFrameChart.along(m, X, [1.0, 0.6, 0.8])
    np.testing.assert_allclose(ch.chart_metric(), B.null_normal_form(2), atol=1e-14)
    np.testing.assert_allclose(ch.to_chart(ch.point([0.3, 0.1, -0.2])), [0.3, 0.1, -0.2], atol=1e-14)


def test_chart_rejects_non_null_direction():
    with pytest.raises(B.BeamError):
        B.NullFrameChart.along(L.minkowski(1), [0.5, 0.5], [1.0, 0.5])


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.2, 2.0), st.floats(-0.5, 0.5))
def test_riccati_flat_closed_form(i1, i2, r):
    C = B.C_matrix(2)
    H0 = np.array([[1j * i1 + r, r], [r, 1j * i2 - r]])
    ric = B.solve_riccati(np.zeros((2, 2)), C, np.eye(2), H0, (0.0, 1.5), n_samples=31)
    Y = np.eye(2)[None] + ric.tau[:, None, None] * (C @ H0)[None]
    np.testing.assert_allclose(ric.Y, Y, atol=1e-10)
    np.testing.assert_allclose(ric.H, np.array([H0 @ np.linalg.inv(y) for y in Y]), atol=1e-10)
    c = ric.conserved()
    assert np.max(np.abs(c - c[0])) <= 1e-8 * abs(c[0])


def test_riccati_oscillator_conservation_and_residual():
    C = B.C_matrix(3)
    D = np.diag([0.0, 1.0, 2.0])
    ric = B.solve_riccati(D, C, np.eye(3), 1j * np.eye(3), (0.0, 3.0))
    c = ric.conserved()
    assert np.max(np.abs(c - c[0])) <= 1e-8 * abs(c[0])
    assert ric.residual(1.3) <= 1e-6


def test_riccati_rejects_nonpositive_imaginary_part():
    with pytest.raises(B.PositivityError):
        B.solve_riccati(np.zeros((1, 1)), B.C_matrix(1), np.eye(1), np.array([[0.3 + 0j]]), (0, 1))


def test_a0_transport_residual():
    ric = B.solve_riccati(np.zeros((2, 2)), B.C_matrix(2), np.eye(2), np.diag([0.5j, 1j]), (0.0, 2.0))
    a0 = B.amplitude_a0(ric)
    assert np.max(B.transport_residual(ric, a0)) <= 1e-8


def _flat_setup(n=1):
    m = L.minkowski(n, T=2.0)
    X0 = np.array([0.2] + [0.3] * n)
    v = np.array([1.0, 1.0] + [0.0] * (n - 1))
    return m, B.NullFrameChart.along(m, X0, v)


def test_a1_weights_against_quadrature():
    m, ch = _flat_setup(2)
    H0 = np.diag([0.5j, 1j])
    ric = B.solve_riccati(np.zeros((2, 2)), B.C_matrix(2), np.eye(2), H0, (0.0, 1.0))
    q = lambda X: 1.0 + X[..., 1] ** 2
    half = B._sqrt_branch(ric, 0.5)
    tr = B.amplitude_a1(ric, q, ch, weight="transport")
    dy = B.amplitude_a1(ric, q, ch, weight="detY")
    s = 0.7
    qs = lambda t: q(ch.gamma(np.array([t]))[0])
    I_plain = quad(qs, 0, s, epsabs=1e-13)[0]
    I_re = quad(lambda t: qs(t) * half(t)[0].real, 0, s, epsabs=1e-13)[0]
    I_im = quad(lambda t: qs(t) * half(t)[0].imag, 0, s, epsabs=1e-13)[0]
    mh = 1 / half(s)[0]
    np.testing.assert_allclose(tr(s)[0], 0.5j * mh * I_plain, atol=1e-10)
    np.testing.assert_allclose(dy(s)[0], -0.5j * mh * (I_re + 1j * I_im), atol=1e-10)


def test_a1_full_mode_matches_transport_weight():
    m, ch = _flat_setup(1)
    q = lambda X: 0.5 + X[..., 0]
    H0 = np.array([[1j]])
    beam_q = B.build_beam(ch, order=2, H0=H0, tau_range=(0.0, 0.6), q=q)
    beam_0 = B.build_beam(ch, order=2, H0=H0, tau_range=(0.0, 0.6))
    ric = B.solve_riccati(np.zeros((1, 1)), B.C_matrix(1), np.eye(1), H0, (0.0, 0.6))
    tr = B.amplitude_a1(ric, q, ch, weight="transport")
    taus = np.array([0.1, 0.3, 0.5])
    diff = beam_q.a1_on_ray(taus) - beam_0.a1_on_ray(taus)
    np.testing.assert_allclose(diff, tr(taus), atol=1e-9)


def test_beam_on_ray_value():
    m, ch = _flat_setup(1)
    beam = B.build_beam(ch, order=0, H0=np.array([[1j]]), tau_range=(0.0, 1.0))
    ric = B.solve_riccati(np.zeros((1, 1)), B.C_matrix(1), np.eye(1), np.array([[1j]]), (0.0, 1.0))
    a0 = B.amplitude_a0(ric)
    # phase z + H z^2 is constant along the ray in 1+1
    val, inside = B.evaluate_beam(beam, [[0.4, 0.0], [0.4, 0.05]], rho=30.0)
    assert inside.all()
    np.testing.assert_allclose(val[0], a0(0.4)[0], atol=1e-12)
    np.testing.assert_allclose(val[1], np.exp(30j * (0.05 + 1j * 0.05**2)) * a0(0.4)[0], atol=1e-12)


def test_beam_residual_improves_with_order():
    m, ch = _flat_setup(2)
    rhos = [50.0, 100.0, 200.0]
    grid = B.ResidualGrid(n_tau=8, n_z=81, half_width=5.0)
    slopes = []
    for order in (0, 2):
        beam = B.build_beam(ch, order=order, H0=np.diag([0.5j, 1j]), tau_range=(0.0, 0.3), delta=100.0)
        res = [B.beam_residual_norm(beam, m, None, r, grid) for r in rhos]
        slopes.append(B.fit_slope(rhos, res))
    assert slopes[1] < slopes[0] - 0.5


def test_residual_grid_resolution_guard():
    m, ch = _flat_setup(1)
    beam = B.build_beam(ch, order=0, H0=np.array([[1j]]), tau_range=(0.0, 0.4))
    with pytest.raises(B.ResolutionError):
        B.beam_residual_norm(beam, m, None, 100.0, B.ResidualGrid(n_tau=4, n_z=9))


def test_fit_slope_exact_power():
    x = np.array([1.0, 2.0, 4.0])
    assert B.fit_slope(x, 3 * x**-1.5) == pytest.approx(-1.5, abs=1e-12)


def test_reflected_beam_cancels_trace_at_contact():
    m = L.minkowski(3, T=3.0)
    u = np.array([1.0, 0.2, 0.1])
    u /= np.linalg.norm(u)
    p1 = np.array([math.cos(0.4), math.sin(0.4), 0.0])
    X0 = np.concatenate(([0.0], p1 - 0.5 * u))
    ch = B.NullFrameChart.along(m, X0, np.concatenate(([1.0], u)))
    inc = B.build_beam(ch, order=2, H0=np.diag([0.5j, 1j, 1j]), tau_range=(0.0, 0.8), delta=4.0)
    ref, data = B.reflect_beam(inc, 0.5, tau_range=(-0.3, 0.3))
    X = data.p1[None]
    ui, _ = B.evaluate_beam(inc, X, 50.0, spacetime=True)
    ur, _ = B.evaluate_beam(ref, X, 50.0, spacetime=True)
    assert abs(ui[0] + ur[0]) <= 1e-10 * abs(ui[0])
