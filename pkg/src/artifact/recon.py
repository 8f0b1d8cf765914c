"""Reconstruction experiments.

Coefficient algebra for the four interacting covectors, stationary-phase
interaction integrals of products of Gaussian beams, the light-ray transform
of a potential read off subleading beam amplitudes, and earliest-arrival
detection in simulated fourth-order DN data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from . import wavelab as wl
from .beams import (C_matrix, NullFrameChart, ResolutionError, _sqrt_branch, amplitude_a1,
                    beam_from_riccati, solve_riccati)
from .lorgeo import (DegeneracyError, GeometryError, Metric, as_coords, bump_jets, choose_interaction_sources,
                     earliest_observation_set, interaction_covectors)


# ---------------------------------------------------------------------------
# covector algebra
# ---------------------------------------------------------------------------
@dataclass
class KappaCoefficients:
    alpha: np.ndarray  # alpha_1..alpha_3
    kappa: np.ndarray  # kappa_0..kappa_3
    theta: np.ndarray  # rows theta_0..theta_3 (1+3 layout)
    residual: float


def kappa_coefficients(r0: float, varsigma: float, sign: int = 1) -> KappaCoefficients:
    """Closed-form ``alpha_j`` with ``theta_0 = sum alpha_j theta_j`` and ``kappa = (1, -alpha)``."""
    if not 0 < varsigma < 1:
        raise DegeneracyError("varsigma must lie in (0, 1)")
    if sign not in (1, -1):
        raise DegeneracyError("sign must be +1 or -1")
    theta = interaction_covectors(3, r0, varsigma, sign)
    if np.allclose(theta[0], theta[1], atol=1e-14):
        raise DegeneracyError("theta_0 coincides with theta_1 (r0 = 0 on the + branch)")
    c = math.sqrt(1 - varsigma**2)
    w = math.sqrt(1 - r0**2)
    den = 1 - c
    a1 = (-c + sign * w) / den
    common = (1 - sign * w) / (2 * den)
    a2 = common + r0 / (2 * varsigma)
    a3 = common - r0 / (2 * varsigma)
    alpha = np.array([a1, a2, a3])
    kappa = np.concatenate(([1.0], -alpha))
    res = float(np.max(np.abs(kappa @ theta)))
    if res > 1e-12 * max(1.0, float(np.max(np.abs(kappa)))):
        raise DegeneracyError(f"linear relation fails (residual {res:.3e})")
    return KappaCoefficients(alpha, kappa, theta, res)


# ---------------------------------------------------------------------------
# interaction integrals
# ---------------------------------------------------------------------------
@dataclass
class InteractionSetup:
    """Four beams through ``q0`` whose weighted phases sum to a stationary phase at ``q0``.

    Beam ``j`` travels along ``theta_j`` raised by the metric, with phase
    differential ``theta_j`` at ``q0``.  Beams with ``kappa_j < 0`` are complex
    conjugates of positive-frequency beams.  Beam 3 enters the product twice
    at half its frequency.
    """

    metric: Metric
    q0: np.ndarray
    r0: float
    varsigma: float
    sign: int
    coeffs: KappaCoefficients
    theta: np.ndarray
    beams: list
    q: Callable | None = None
    amp_scale: complex = 1.0
    offsets: np.ndarray | None = None

    @property
    def kappa(self) -> np.ndarray:
        return self.coeffs.kappa

    def beam_values(self, X: np.ndarray, rho: float):
        """``(S, A)`` with the product of the five factors equal to ``exp(i rho S) A``."""
        S = np.zeros(len(X), dtype=complex)
        A = np.ones(len(X), dtype=complex)
        for j, (beam, kap) in enumerate(zip(self.beams, self.kappa)):
            power = 2 if j == 3 else 1
            freq = abs(kap) * rho / power
            phi, amp, _ = beam.factors(beam.chart.to_chart(X), freq)
            amp = self.amp_scale * amp
            if kap < 0:
                phi, amp = np.conj(phi), np.conj(amp)
            S = S + kap * phi
            A = A * amp**power
        return S, A


def build_interaction_setup(metric: Metric, q0, r0: float = 1.0, varsigma: float = 0.6, sign: int = 1,
                            q: Callable | None = None, tau_range=(-0.5, 0.5), H0_scale: float = 1.0,
                            offsets=None, amp_scale: complex = 1.0, delta: float = 2.0) -> InteractionSetup:
    """Beams along the four interaction directions through ``q0`` (flat 1+2 or 1+3 charts).

    ``q`` enters the subleading amplitudes through the potential-induced
    part of ``a1``.  ``offsets`` (shape ``(4, dim)``) displaces the beams'
    reference points; nonzero transverse offsets break the common
    intersection (negative control).
    """
    X0 = as_coords(q0)
    n = metric.n
    if n not in (2, 3):
        raise GeometryError("interaction setups need n in {2, 3}")
    coeffs = kappa_coefficients(r0, varsigma, sign)
    theta = interaction_covectors(n, r0, varsigma, sign)
    gi = np.linalg.inv(metric.g(X0))
    offsets = np.zeros((4, n + 1)) if offsets is None else np.asarray(offsets, float)
    beams = []
    for j in range(4):
        v = gi @ theta[j]
        if v[0] <= 0:
            raise GeometryError("raised interaction covector is not future pointing")
        chart = NullFrameChart.along(metric, X0 + offsets[j], v)
        if not chart.is_flat(np.linspace(*tau_range, 3)):
            raise GeometryError("interaction beams are built in flat charts")
        # the chart phase has differential g(v, .) = theta_j on the ray
        ric = solve_riccati(chart.D, C_matrix(n), np.eye(n), 1j * H0_scale * np.eye(n), tau_range)
        a1 = amplitude_a1(ric, q, chart, weight="transport") if q is not None else None
        beams.append(beam_from_riccati(chart, ric, a1, delta=delta))
    return InteractionSetup(metric, X0, r0, varsigma, sign, coeffs, theta, beams, q, amp_scale, offsets)


def phase_hessian(setup: InteractionSetup, h: float = 1e-4) -> np.ndarray:
    """Spacetime Hessian of ``S`` at ``q0`` by central differences (complex)."""
    d = len(setup.q0)
    H = np.zeros((d, d), dtype=complex)
    E = np.eye(d) * h
    for i in range(d):
        for j in range(d):
            P = np.array([setup.q0 + E[i] + E[j], setup.q0 + E[i] - E[j], setup.q0 - E[i] + E[j],
                          setup.q0 - E[i] - E[j]])
            S, _ = setup.beam_values(P, 1.0)
            H[i, j] = (S[0] - S[1] - S[2] + S[3]) / (4 * h * h)
    return 0.5 * (H + H.T)


@dataclass
class QuadratureGrid:
    """Box ``q0 + w / sqrt(rho)`` with ``w`` on a uniform grid of ``m`` points per axis."""

    half_width: float
    m: int

    def cells_per_width(self) -> float:
        return (self.m - 1) / (2 * self.half_width)


def default_quadrature(setup: InteractionSetup, decay: float = 36.0, cells: float = 8.0) -> QuadratureGrid:
    """Half width where ``exp(-Im S)`` falls below ``exp(-decay)`` in scaled units."""
    lam = float(np.min(np.linalg.eigvalsh(phase_hessian(setup).imag))) / 2
    if lam <= 0:
        raise DegeneracyError("Im S is not positive definite at q0")
    hw = math.sqrt(decay / lam)
    m = int(math.ceil(2 * hw * cells)) + 1
    return QuadratureGrid(hw, m | 1)


def interaction_integral(setup: InteractionSetup, coef: Callable, rho: float, grid: QuadratureGrid,
                         scaled: bool = True) -> complex:
    """``rho^(d/2) * int coef * prod(beams) dV`` over the scaled box around ``q0``.

    ``scaled=False`` returns the unnormalized integral.
    """
    if grid.cells_per_width() < 8:
        raise ResolutionError(f"quadrature resolves 1/sqrt(rho) with {grid.cells_per_width():.2f} < 8 cells")
    d = len(setup.q0)
    w = np.linspace(-grid.half_width, grid.half_width, grid.m)
    dw = w[1] - w[0]
    W = np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d)
    acc = 0.0 + 0.0j
    for chunk in np.array_split(np.arange(len(W)), max(1, len(W) // 200_000)):
        X = setup.q0 + W[chunk] / math.sqrt(rho)
        S, A = setup.beam_values(X, rho)
        vol = np.sqrt(np.abs(np.linalg.det(setup.metric.g(X))))
        with np.errstate(under="ignore"):
            acc += np.sum(np.exp(1j * rho * S) * A * coef(X) * vol)
    val = acc * dw**d
    return complex(val if scaled else val * rho ** (-d / 2))


def phase_positivity(setup: InteractionSetup, grid: QuadratureGrid, rho: float) -> dict:
    """Minimum of ``Im S`` on the box and the distance of its near-zeros from ``q0`` (in cells)."""
    d = len(setup.q0)
    w = np.linspace(-grid.half_width, grid.half_width, min(grid.m, 41))
    W = np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d)
    X = setup.q0 + W / math.sqrt(rho)
    S, _ = setup.beam_values(X, rho)
    cell = (w[1] - w[0]) / math.sqrt(rho)
    zero = np.abs(S.imag) <= 1e-14
    far = float(np.max(np.linalg.norm(X[zero] - setup.q0, axis=1)) / cell) if np.any(zero) else 0.0
    return {"min_imag": float(np.min(S.imag)), "zero_distance_cells": far}


def richardson(rhos: Sequence[float], values: Sequence[complex]) -> tuple[complex, float]:
    """Two-term extrapolation in ``1/rho`` from the last two ladder values.

    Returns the extrapolated value and the relative disagreement with the
    extrapolation from the preceding pair (``nan`` with fewer than three).
    """
    r = np.asarray(rhos, float)
    v = np.asarray(values, complex)

    def pair(i):
        return (r[i + 1] * v[i + 1] - r[i] * v[i]) / (r[i + 1] - r[i])

    best = pair(len(r) - 2)
    if len(r) < 3:
        return complex(best), float("nan")
    prev = pair(len(r) - 3)
    return complex(best), float(abs(best - prev) / max(abs(best), 1e-300))


@dataclass
class RatioReport:
    rhos: list
    ladder_tilde: list
    ladder_plain: list
    ratios: list
    extrapolated: complex
    residual: float
    reliable: bool
    grid: QuadratureGrid
    extra: dict = field(default_factory=dict)


def recover_amplitude_ratio(plain: InteractionSetup, tilde: InteractionSetup, a: Callable, a_tilde: Callable,
                            beta: Callable, rhos=(50, 100, 200, 400), grid: QuadratureGrid | None = None,
                            reliability: float = 0.05, plain_ladder: Sequence[complex] | None = None) -> RatioReport:
    """Extrapolated ratio of ``rho^(d/2) I~`` (coefficient ``exp(beta) a~``) to ``rho^(d/2) I`` (``a``).

    The stationary-phase constant cancels in the ratio, whose limit is
    ``exp(beta(q0)) a~(q0) / a(q0)``.  ``plain_ladder`` reuses precomputed
    values of the denominator on the same ``rhos`` and grid.
    """
    grid = grid or default_quadrature(plain)
    coef_t = lambda X: np.exp(beta(X)) * a_tilde(X)
    lt = [interaction_integral(tilde, coef_t, rho, grid) for rho in rhos]
    if plain_ladder is None:
        lp = [interaction_integral(plain, a, rho, grid) for rho in rhos]
    else:
        if len(plain_ladder) != len(rhos):
            raise ValueError("plain_ladder must match rhos")
        lp = list(plain_ladder)
    et, res_t = richardson(rhos, lt)
    ep, res_p = richardson(rhos, lp)
    ratios = [t / p for t, p in zip(lt, lp)]
    er, res_r = richardson(rhos, ratios)
    extrap = et / ep
    res = float(np.nanmax([res_t, res_p, res_r]))
    return RatioReport(list(rhos), lt, lp, ratios, complex(extrap), res, bool(res <= reliability), grid,
                       {"ratio_extrapolated": complex(er)})


def bump_potential(center, width: float, amp: float) -> tuple[Callable, Callable]:
    """``beta`` bump and the potential ``q = -exp(beta) box exp(-beta)`` (flat metric, analytic)."""
    center = np.asarray(center, float)

    def beta(X):
        return bump_jets(np.asarray(X, float), amp, center, width)[0]

    def q(X):
        X = np.asarray(X, float)
        _, db, d2b = bump_jets(X, amp, center, width)
        eta = -np.ones(X.shape[-1])
        eta[1:] = 1.0
        return np.einsum("...ii,i->...", d2b, eta) - np.einsum("...i,...i,i->...", db, db, eta)

    return beta, q


# ---------------------------------------------------------------------------
# light-ray transform
# ---------------------------------------------------------------------------
@dataclass
class RayTransformSample:
    s0: float
    weighted: float | complex
    unweighted: float | complex
    weighted_quadrature: float
    unweighted_quadrature: float


@dataclass
class RayTransform:
    chart: NullFrameChart
    riccati: object
    detY_path: object
    transport_path: object

    def sample(self, s0: float, q: Callable) -> RayTransformSample:
        s = np.array([s0])
        half = _sqrt_branch(self.riccati, 0.5)
        weighted = complex(2j * half(s)[0] * self.detY_path(s)[0])
        unweighted = complex(-2j * half(s)[0] * self.transport_path(s)[0])
        lo = float(self.riccati.tau[0])
        f = lambda t: q(self.chart.gamma(np.array([t]))[0])
        wq = quad(lambda t: f(t) * half(np.array([t]))[0].real, lo, s0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        wq_im = quad(lambda t: f(t) * half(np.array([t]))[0].imag, lo, s0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        uq = quad(f, lo, s0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return RayTransformSample(s0, weighted, unweighted, complex(wq, wq_im), uq)

    def recover_q(self, s0: float, hs: float = 1e-3) -> complex:
        """Central difference in ``s0`` of the amplitude-derived unweighted integral."""
        s = np.array([s0 - hs, s0 + hs])
        half = _sqrt_branch(self.riccati, 0.5)
        vals = -2j * half(s) * self.transport_path(s)
        return complex((vals[1] - vals[0]) / (2 * hs))


def ray_transform_q(metric: Metric, origin, direction, q: Callable | None, s_range=(0.0, 1.0),
                    H0=None) -> RayTransform:
    """Potential-induced subleading amplitudes along the null ray ``origin + s * direction``.

    The weighted integral is ``2i det Y^{1/2} (a1~ - a1)`` with the
    ``det Y``-weighted amplitude; the unweighted one is
    ``-2i det Y^{1/2} (a1~ - a1)`` with the transport-consistent amplitude.
    """
    chart = NullFrameChart.along(metric, origin, direction)
    if not chart.is_flat(np.linspace(*s_range, 3)):
        raise GeometryError("ray transform experiment runs in a flat chart")
    n = chart.n
    H0 = 1j * np.eye(n) if H0 is None else np.asarray(H0, complex)
    ric = solve_riccati(chart.D, C_matrix(n), np.eye(n), H0, s_range)
    p1 = amplitude_a1(ric, q, chart, weight="detY")
    p2 = amplitude_a1(ric, q, chart, weight="transport")
    return RayTransform(chart, ric, p1, p2)


# ---------------------------------------------------------------------------
# observation sets from DN data
# ---------------------------------------------------------------------------
@dataclass
class Arrival:
    face_id: int
    t_detected: float | None
    t_geometric: float | None
    cell_error: float | None


@dataclass
class ObservationReport:
    q0: np.ndarray
    arrivals: list
    h: float
    dt: float
    signal: wl.DNSignal | None = None


def detect_arrival(trace: np.ndarray, t: np.ndarray, noise_window: int = 10, factor: float = 5.0,
                   floor: float = 6e-3) -> float | None:
    """Earliest time where the second difference of ``trace`` exceeds ``factor`` times the noise.

    The noise level is the largest second difference in the first
    ``noise_window`` samples, floored at ``floor`` times the record's peak
    (a noiseless simulated record has an exactly zero pre-arrival window).
    """
    dt = t[1] - t[0]
    d2 = np.zeros_like(trace)
    d2[1:-1] = np.abs(trace[2:] - 2 * trace[1:-1] + trace[:-2]) / dt**2
    peak = float(np.max(d2))
    if peak == 0:
        return None
    noise = max(float(np.max(d2[1:noise_window + 1])), floor * peak)
    hit = np.nonzero(d2 > factor * noise)[0]
    return float(t[hit[0]]) if len(hit) else None


def interaction_pulses(metric: Metric, q0, width: float, varsigma: float = 0.5, scale: float = 0.05):
    """Dirichlet data for the four sources: a pulse that starts when each ray through ``q0`` meets the boundary."""
    srcs = choose_interaction_sources(metric, q0, varsigma, scale=scale, require_positive_time=False)
    fs = []
    for s in srcs:
        if s.entry[0] < -1e-12:
            raise GeometryError(f"ray through q0 meets the boundary at t={s.entry[0]:.4g} < 0")
        f = [None] * (2 * metric.n)
        f[s.entry_face] = wl.smooth_pulse(max(float(s.entry[0]), 0.0), width)
        fs.append(f)
    return fs, srcs


def observation_set_from_data(metric: Metric, q0, grid: wl.GridSpec, a=1.0, width: float = 0.1,
                              eps: float = 0.05, detect: dict | None = None) -> ObservationReport:
    """Detected earliest arrivals of the fourth-order DN response versus the geometric set (1+1)."""
    if metric.n != 1:
        raise GeometryError("arrival detection runs in 1+1")
    fs, _ = interaction_pulses(metric, q0, width)
    sig = wl.dn_fourth_mixed(metric, None, a, fs, grid, eps=eps)
    geo = earliest_observation_set(metric, q0)
    arrivals = []
    for k in sig.face_ids:
        hits = [o for o in geo if o.face == k and not o.censored]
        tg = float(hits[0].point[0]) if hits else None
        td = detect_arrival(sig.neumann[k], sig.t, **(detect or {}))
        err = None if (td is None or tg is None) else (td - tg) / grid.h
        arrivals.append(Arrival(k, td, tg, err))
    return ObservationReport(as_coords(q0), arrivals, grid.h, grid.dt, sig)
