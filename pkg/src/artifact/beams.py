"""Gaussian beams along null geodesics.

Two chart types are provided.  :class:`NullFrameChart` is the affine chart of
a constant metric along a straight null line, in which the metric is exactly
``2 dtau dz^1 + sum_a (dz^a)^2``; beams in it carry Taylor jets of arbitrary
order, marched by :func:`build_beam`.  :class:`FermiChart` is the numerically
constructed chart of a curved metric; beams there use the quadratic phase of
the Riccati flow and the leading amplitude ``det Y^{-1/2}``.

Chart coordinates are ``(tau, z^1, ..., z^n)``; ``z^1`` is the direction
paired with ``tau`` in the null normal form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import lorgeo
from ._poly import PolySpace
from .lorgeo import Domain, Metric, as_coords


class BeamError(Exception):
    """Base class for beam construction failures."""


class ConjugatePointError(BeamError):
    """Degenerate Jacobi field / branch ambiguity along the ray."""


class PositivityError(BeamError):
    """Loss of positivity of ``Im H``."""


class ConfigurationError(BeamError, ValueError):
    """Missing data for the requested mode."""


class ResolutionError(BeamError, ValueError):
    """Quadrature grid too coarse for the beam width."""


# ---------------------------------------------------------------------------
# frames and charts
# ---------------------------------------------------------------------------
def null_frame(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Columns ``[v, w, e_2, ...]`` with ``g(v,w) = 1``, ``w`` null, ``e_a`` orthonormal."""
    d = len(v)
    r = np.zeros(d)
    r[0] = 1.0
    c = v @ g @ r
    if abs(c) < 1e-12:
        raise BeamError("direction is not transversal to the time axis")
    w = r / c - (r @ g @ r) / (2 * c * c) * v
    cols = [v, w]
    for k in range(1, d):
        x = np.zeros(d)
        x[k] = 1.0
        x = x - (x @ g @ w) * v - (x @ g @ v) * w
        for e in cols[2:]:
            x = x - (x @ g @ e) * e
        nrm = x @ g @ x
        if nrm > 1e-10:
            cols.append(x / math.sqrt(nrm))
        if len(cols) == d:
            break
    if len(cols) < d:
        raise BeamError("could not complete the null frame")
    return np.array(cols).T


def null_normal_form(n: int) -> np.ndarray:
    G = np.zeros((n + 1, n + 1))
    G[0, 1] = G[1, 0] = 1.0
    for a in range(2, n + 1):
        G[a, a] = 1.0
    return G


@dataclass
class NullFrameChart:
    """Affine chart ``X = origin + E (tau, z)`` of a constant metric."""

    metric: Metric
    origin: np.ndarray
    E: np.ndarray

    @classmethod
    def along(cls, metric: Metric, origin, v) -> "NullFrameChart":
        X0 = as_coords(origin)
        g = metric.g(X0)
        v = np.asarray(v, dtype=float)
        if abs(v @ g @ v) > 1e-10 * (v @ v):
            raise BeamError("chart direction must be null")
        return cls(metric, X0, null_frame(g, v))

    @property
    def n(self) -> int:
        return len(self.origin) - 1

    def point(self, tz) -> np.ndarray:
        tz = np.asarray(tz, dtype=float)
        return self.origin + tz @ self.E.T

    def to_chart(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.linalg.solve(self.E, (X - self.origin).reshape(-1, len(self.origin)).T).T.reshape(X.shape)

    def gamma(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return self.origin + tau[:, None] * self.E[:, 0]

    def chart_metric(self) -> np.ndarray:
        G = self.E.T @ self.metric.g(self.origin) @ self.E
        return 0.5 * (G + G.T)

    @property
    def volume_factor(self) -> float:
        return abs(np.linalg.det(self.E)) * math.sqrt(abs(np.linalg.det(self.metric.g(self.origin))))

    def is_flat(self, taus=(0.0,), tol: float = 1e-12) -> bool:
        X = self.gamma(np.asarray(taus))
        return bool(np.max(np.abs(self.metric.dg(X))) <= tol)

    def D(self, tau) -> np.ndarray:
        return np.zeros((self.n, self.n))


@dataclass
class FermiChart:
    """Fermi chart along a null geodesic of a general metric."""

    metric: Metric
    sol: Callable
    tau_range: tuple
    rk_steps: int = 16
    h_jac: float = 1e-4

    @property
    def n(self) -> int:
        return self.metric.n

    def _state(self, tau):
        d = self.metric.dim
        y = self.sol(tau)
        X, V = y[:d], y[d:2 * d]
        F = y[2 * d:].reshape(d - 1, d).T  # columns w, e_2, ...
        return X, V, F

    def gamma(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.array([self._state(t)[0] for t in tau])

    def frame(self, tau) -> np.ndarray:
        X, V, F = self._state(tau)
        return np.column_stack((V, F))

    def point(self, tz) -> np.ndarray:
        tz = np.asarray(tz, dtype=float)
        if tz.ndim > 1:
            return np.array([self.point(p) for p in tz])
        X, V, F = self._state(tz[0])
        z = tz[1:]
        if not np.any(z):
            return X
        y = lorgeo._rk4_geodesic(self.metric, X, F @ z, 1.0, 1.0 / self.rk_steps)
        return y[: self.metric.dim]

    def jacobian(self, tz) -> np.ndarray:
        tz = np.asarray(tz, dtype=float)
        d = len(tz)
        w, off = lorgeo._fd_weights()
        J = np.zeros((d, d))
        for k in range(d):
            E = np.zeros(d)
            E[k] = self.h_jac
            J[:, k] = sum(wi * self.point(tz + oi * E) for wi, oi in zip(w, off)) / self.h_jac
        return J

    def pulled_metric(self, tz) -> np.ndarray:
        J = self.jacobian(tz)
        G = J.T @ self.metric.g(self.point(tz)) @ J
        return 0.5 * (G + G.T)

    def D(self, tau) -> np.ndarray:
        """``D_ij = 1/2 R(gamma', E_i, gamma', E_j)`` over the transverse frame ``E_1..E_n``."""
        X, V, F = self._state(tau)
        R = lorgeo.riemann_at(self.metric, X)
        M = np.einsum("abcd,a,bi,c,dj->ij", R, V, F, V, F)
        M = 0.5 * (M + M.T)
        return 0.5 * M


def build_fermi_chart(metric: Metric, p0, v0, tau_range=(0.0, 1.0), rk_steps: int = 16,
                      n_check: int = 5, rtol: float = 1e-12, atol: float = 1e-13) -> FermiChart:
    """Parallel-transport a null frame along the geodesic through ``p0`` with velocity ``v0``."""
    X0 = as_coords(p0)
    V0 = np.asarray(v0, dtype=float)
    d = metric.dim
    E = null_frame(metric.g(X0), V0)
    y0 = np.concatenate((X0, V0, E[:, 1:].T.ravel()))

    def rhs(s, y):
        X, V = y[:d], y[d:2 * d]
        F = y[2 * d:].reshape(d - 1, d)
        Gam = lorgeo._christoffel(metric, X)
        dV = -np.einsum("ijk,j,k->i", Gam, V, V)
        dF = -np.einsum("ijk,j,mk->mi", Gam, V, F)
        return np.concatenate((V, dV, dF.ravel()))

    lo, hi = tau_range
    pad = 0.01 + 0.05 * (hi - lo)
    pieces = []
    for span in ((0.0, hi + pad), (0.0, lo - pad)):
        if span[1] != span[0]:
            s = solve_ivp(rhs, span, y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
            if s.status != 0:
                raise BeamError(f"frame transport failed: {s.message}")
            pieces.append((min(span), max(span), s.sol))

    def sol(t):
        for a, b, f in pieces:
            if a - 1e-12 <= t <= b + 1e-12:
                return f(t)
        raise ValueError(f"tau={t} outside chart range {tau_range}")

    sol.pad = pad

    chart = FermiChart(metric, sol, (lo, hi), rk_steps)
    # monitor: chart metric on the ray is the null normal form, Jacobian nondegenerate
    NF = null_normal_form(metric.n)
    for t in np.linspace(lo, hi, n_check):
        G = chart.pulled_metric(np.concatenate(([t], np.zeros(metric.n))))
        if np.max(np.abs(G - NF)) > 1e-6:
            raise ConjugatePointError(f"chart degenerates near tau={t:.4g}")
    return chart


# ---------------------------------------------------------------------------
# Riccati flow and leading amplitude
# ---------------------------------------------------------------------------
def C_matrix(n: int) -> np.ndarray:
    C = 2.0 * np.eye(n)
    C[0, 0] = 0.0
    return C


@dataclass
class RiccatiSolution:
    tau: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    c0: float
    C: np.ndarray
    dense: Callable
    D: Callable

    def YZ_at(self, tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        n = self.C.shape[0]
        y = self.dense(tau)
        Y = y[: n * n].T.reshape(-1, n, n)
        Z = y[n * n:].T.reshape(-1, n, n)
        return Y, Z

    def Y_at(self, tau):
        return self.YZ_at(tau)[0]

    def H_at(self, tau):
        Y, Z = self.YZ_at(tau)
        H = np.linalg.solve(np.swapaxes(Y, -1, -2), np.swapaxes(Z, -1, -2))
        H = np.swapaxes(H, -1, -2)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def conserved(self) -> np.ndarray:
        return np.linalg.det(self.H.imag) * np.abs(np.linalg.det(self.Y)) ** 2

    def residual(self, tau, h: float = 1e-4) -> float:
        """``|| H' + H C H + D ||`` at ``tau`` with a centered difference for ``H'``."""
        Hp = (self.H_at(tau + h)[0] - self.H_at(tau - h)[0]) / (2 * h)
        H = self.H_at(tau)[0]
        return float(np.max(np.abs(Hp + H @ self.C @ H + self.D(tau))))


def solve_riccati(D, C, Y0, H0, tau_range, n_samples: int = 201, rtol: float = 1e-12,
                  atol: float = 1e-14) -> RiccatiSolution:
    """Solve ``H' + H C H + D = 0`` via ``Y' = C Z``, ``Z' = -D Y``, ``H = Z Y^{-1}``."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    Dfun = D if callable(D) else (lambda t, M=np.asarray(D, dtype=float): M)
    Y0 = np.asarray(Y0, dtype=complex)
    H0 = np.asarray(H0, dtype=complex)
    if np.min(np.linalg.eigvalsh(0.5 * (H0.imag + H0.imag.T))) <= 0:
        raise PositivityError("Im H0 must be positive definite")
    if abs(np.linalg.det(Y0)) < 1e-14:
        raise ConjugatePointError("Y0 is singular")
    Z0 = H0 @ Y0

    def rhs(t, y):
        Y = y[: n * n].reshape(n, n)
        Z = y[n * n:].reshape(n, n)
        return np.concatenate(((C @ Z).ravel(), (-Dfun(t) @ Y).ravel()))

    lo, hi = tau_range
    sol = solve_ivp(rhs, (lo, hi), np.concatenate((Y0.ravel(), Z0.ravel())), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if sol.status != 0:
        raise BeamError(f"Riccati integration failed: {sol.message}")
    tau = np.linspace(lo, hi, n_samples)
    y = sol.sol(tau)
    Y = y[: n * n].T.reshape(-1, n, n)
    Z = y[n * n:].T.reshape(-1, n, n)
    if np.min(np.abs(np.linalg.det(Y))) < 1e-14:
        raise ConjugatePointError("Y became singular")
    H = np.swapaxes(np.linalg.solve(np.swapaxes(Y, -1, -2), np.swapaxes(Z, -1, -2)), -1, -2)
    asym = np.max(np.abs(H - np.swapaxes(H, -1, -2)))
    if asym > 1e-9:
        raise BeamError(f"H lost symmetry ({asym:.2e})")
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    lam = np.linalg.eigvalsh(H.imag)
    if np.min(lam) <= 0:
        k = int(np.argmin(np.min(lam, axis=-1)))
        raise PositivityError(f"Im H lost positivity at tau={tau[k]:.4g}")
    cons = np.linalg.det(H.imag) * np.abs(np.linalg.det(Y)) ** 2
    return RiccatiSolution(tau, Y, Z, H, float(cons[0]), C, sol.sol, Dfun)


@dataclass
class AmplitudePath:
    """Scalar amplitude along the ray with a fixed square-root branch."""

    tau: np.ndarray
    values: np.ndarray
    fn: Callable

    def __call__(self, tau):
        return self.fn(tau)


def _sqrt_branch(riccati: RiccatiSolution, power: float):
    """``det Y^{power}`` with ``power = +-1/2`` on the unwrapped branch."""
    tau = riccati.tau
    det = np.linalg.det(riccati.Y)
    if np.min(np.abs(det)) < 1e-12:
        raise ConjugatePointError("det Y vanishes; square-root branch undefined")
    ang = np.unwrap(np.angle(det))
    jumps = np.abs(np.diff(ang))
    if jumps.size and np.max(jumps) > 1.0:
        raise ConjugatePointError("phase of det Y under-resolved; refine the tau sampling")
    vals = np.abs(det) ** power * np.exp(1j * power * ang)

    def fn(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        dt = np.linalg.det(riccati.Y_at(t))
        a_ref = np.interp(t, tau, ang)
        a = np.angle(dt)
        a = a + 2 * np.pi * np.round((a_ref - a) / (2 * np.pi))
        return np.abs(dt) ** power * np.exp(1j * power * a)

    return AmplitudePath(tau, vals, fn)


def amplitude_a0(riccati: RiccatiSolution) -> AmplitudePath:
    """Leading amplitude on the ray, ``det Y(tau)^{-1/2}``."""
    return _sqrt_branch(riccati, -0.5)


def amplitude_a1(riccati: RiccatiSolution, q: Callable | None, chart, mode: str = "q_difference",
                 weight: str = "detY", beam: "GaussianBeam | None" = None, rtol: float = 1e-12,
                 atol: float = 1e-14) -> AmplitudePath:
    """Subleading amplitude on the ray.

    ``q_difference`` returns the potential-induced part.  With
    ``weight="detY"`` it is ``-(i/2) det Y^{-1/2} int q det Y^{1/2} dtau'``.
    With ``weight="transport"`` it is ``+(i/2) det Y^{-1/2} int q dtau'``, the
    exact solution of the on-ray transport equation for the ansatz
    ``exp(i rho phi)(a0 + a1/rho)`` with ``a0 = det Y^{-1/2}``; this is the
    value that ``full``-mode differences reproduce.  ``full`` reads ``a1`` on
    the ray from a jet beam of order at least 2 built with the same ``q``.
    """
    tau = riccati.tau
    if mode == "full":
        if beam is None or beam.deg_a1 < 0 or beam.space.D < 2:
            raise ConfigurationError("full mode needs a beam with order >= 2 (transverse a0 jets)")
        vals = beam.a1_on_ray(tau)
        return AmplitudePath(tau, vals, lambda t: beam.a1_on_ray(np.atleast_1d(t)))
    if mode != "q_difference":
        raise ConfigurationError(f"unknown mode {mode!r}")
    if weight not in ("detY", "transport"):
        raise ConfigurationError(f"unknown weight {weight!r}")
    if q is None:
        zero = np.zeros(len(tau), dtype=complex)
        return AmplitudePath(tau, zero, lambda t: np.zeros(np.size(t), dtype=complex))
    half = _sqrt_branch(riccati, 0.5)
    mhalf = _sqrt_branch(riccati, -0.5)

    def integrand(t, y):
        qv = q(chart.gamma(np.array([t]))[0])
        w = half(t)[0] if weight == "detY" else 1.0
        return np.array([qv * w], dtype=complex)

    sol = solve_ivp(integrand, (tau[0], tau[-1]), np.zeros(1, dtype=complex), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    pref = -0.5j if weight == "detY" else 0.5j
    vals = pref * mhalf.values * sol.sol(tau)[0]

    def fn(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return pref * mhalf(t) * sol.sol(t)[0]

    return AmplitudePath(tau, vals, fn)


def transport_residual(riccati: RiccatiSolution, a0: AmplitudePath, h: float = 1e-5) -> np.ndarray:
    """``|2 a0' + Tr(C H) a0|`` at the interior samples, ``a0'`` by centered differences."""
    tau = riccati.tau[1:-1]
    da = (a0(tau + h) - a0(tau - h)) / (2 * h)
    trCH = np.einsum("ij,mji->m", riccati.C, riccati.H_at(tau))
    return np.abs(2 * da + trCH * a0(tau))


def beam_table(riccati: RiccatiSolution, a0: AmplitudePath, a1: AmplitudePath | None = None) -> np.ndarray:
    """Rows ``tau, Re/Im H_ij (i <= j), Re a0, Im a0, Re a1, Im a1``."""
    tau = riccati.tau
    n = riccati.C.shape[0]
    iu = np.triu_indices(n)
    Hs = riccati.H[:, iu[0], iu[1]]
    a1v = a1.values if a1 is not None else np.zeros(len(tau), dtype=complex)
    cols = [tau[:, None]]
    for k in range(Hs.shape[1]):
        cols.append(np.column_stack((Hs[:, k].real, Hs[:, k].imag)))
    cols += [np.column_stack((a0.values.real, a0.values.imag, a1v.real, a1v.imag))]
    return np.hstack(cols)


def beam_table_header(n: int) -> list[str]:
    out = ["tau"]
    for i, j in zip(*np.triu_indices(n)):
        out += [f"re_H{i + 1}{j + 1}", f"im_H{i + 1}{j + 1}"]
    return out + ["re_a0", "im_a0", "re_a1", "im_a1"]


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------
def _smooth_step(x):
    """``0`` for ``x <= 0``, ``1`` for ``x >= 1``, smooth in between."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
        return np.where(a + b > 0, a / (a + b), 0.0)


def cutoff(r):
    """Smooth profile, ``1`` on ``[0, 1/4]`` and ``0`` outside ``[0, 1/2]``."""
    r = np.abs(np.asarray(r, dtype=float))
    return 1.0 - _smooth_step((r - 0.25) / 0.25)


# ---------------------------------------------------------------------------
# jet beams in flat charts
# ---------------------------------------------------------------------------
def _q_jets(q: Callable, chart: NullFrameChart, tau: float, space: PolySpace, deg: int, h: float = 1e-3):
    """Taylor coefficients of ``q`` in ``z`` at ``gamma(tau)`` up to degree ``min(deg, 2)``."""
    out = space.zero()
    if q is None or deg < 0:
        return out
    n = space.nv
    base = np.concatenate(([tau], np.zeros(n)))

    def f(z):
        return q(chart.point(base + np.concatenate(([0.0], z))))

    z0 = np.zeros(n)
    q0 = f(z0)
    out[0] = q0
    if deg >= 1:
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[space.index[tuple(int(k == i) for k in range(n))]] = (
                -f(2 * e) + 8 * f(e) - 8 * f(-e) + f(-2 * e)) / (12 * h)
    if deg >= 2:
        for i in range(n):
            for j in range(i, n):
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = h
                ej[j] = h
                if i == j:
                    d2 = (-f(2 * ei) + 16 * f(ei) - 30 * q0 + 16 * f(-ei) - f(-2 * ei)) / (12 * h * h)
                    c = d2 / 2
                else:
                    c = (f(ei + ej) - f(ei - ej) - f(-ei + ej) + f(-ei - ej)) / (4 * h * h)
                ex = [0] * n
                ex[i] += 1
                ex[j] += 1
                out[space.index[tuple(ex)]] = c
    if deg > 2:
        raise ConfigurationError("potential jets implemented up to degree 2 (order N <= 4)")
    return out


class _JetSystem:
    """Right-hand side of the flat-chart jet equations for phase and amplitudes."""

    def __init__(self, space: PolySpace, deg_a0: int, deg_a1: int, q: Callable | None, chart):
        self.S = space
        self.n = space.nv
        self.deg_a0 = deg_a0
        self.deg_a1 = deg_a1
        self.q = q
        self.chart = chart
        self.one = space.const(1.0)

    def split(self, y):
        m = self.S.size
        return y[:m], y[m:2 * m], y[2 * m:]

    def phase_tau(self, phi):
        S = self.S
        p1 = S.deriv(phi, 0)
        Sa = S.zero()
        for a in range(1, self.n):
            pa = S.deriv(phi, a)
            Sa = Sa + S.mul(pa, pa)
        pt = S.zero()
        for k in range(2, S.D + 1):
            r = S.part(2 * S.mul(pt, p1) + Sa, k)
            pt = pt - r / 2
        return pt

    def box(self, f, f_tau):
        S = self.S
        out = 2 * S.deriv(f_tau, 0)
        for a in range(1, self.n):
            out = out + S.deriv(S.deriv(f, a), a)
        return out

    def amp_tau(self, phi, pt, a, src, deg):
        S = self.S
        if deg < 0:
            return S.zero()
        p1m = S.deriv(phi, 0) - self.one
        rest = 2 * S.mul(pt, S.deriv(a, 0)) + S.mul(self.box(phi, pt), a) - src
        for b in range(1, self.n):
            rest = rest + 2 * S.mul(S.deriv(phi, b), S.deriv(a, b))
        at = S.zero()
        for k in range(0, deg + 1):
            r = S.part(rest + 2 * S.mul(p1m, at), k)
            at = at - r / 2
        return S.truncate(at, deg)

    def derivs(self, tau, y):
        phi, a0, a1 = self.split(y)
        pt = self.phase_tau(phi)
        a0t = self.amp_tau(phi, pt, a0, self.S.zero(), self.deg_a0)
        if self.deg_a1 >= 0:
            qj = _q_jets(self.q, self.chart, tau, self.S, self.deg_a1) if self.q is not None else self.S.zero()
            src = 1j * (self.box(a0, a0t) + self.S.mul(qj, a0))
            a1t = self.amp_tau(phi, pt, a1, self.S.truncate(src, self.deg_a1), self.deg_a1)
        else:
            a1t = self.S.zero()
        return pt, a0t, a1t

    def __call__(self, tau, y):
        return np.concatenate(self.derivs(tau, y))


@dataclass
class GaussianBeam:
    """A Gaussian beam ``exp(i rho phi) chi(|z|/delta) (a0 + a1/rho)`` in chart coordinates."""

    chart: object
    order: int
    delta: float
    space: PolySpace
    deg_a0: int
    deg_a1: int
    tau_range: tuple
    coeffs_fn: Callable
    a1_path: Callable | None = None
    system: _JetSystem | None = None
    H0: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    sign: int = 1

    def coeffs(self, tau):
        """Coefficient arrays ``(phi, a0, a1)`` of shape ``(m, size)``."""
        return self.coeffs_fn(np.atleast_1d(np.asarray(tau, dtype=float)))

    def H_at(self, tau) -> np.ndarray:
        phi = self.coeffs(tau)[0]
        S = self.space
        n = S.nv
        H = np.zeros((phi.shape[0], n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                e = [0] * n
                e[i] += 1
                e[j] += 1
                c = phi[:, S.index[tuple(e)]]
                H[:, i, j] = c if i == j else c / 2
        return H

    def a0_on_ray(self, tau):
        return self.coeffs(tau)[1][:, 0]

    def a1_on_ray(self, tau):
        out = self.coeffs(tau)[2][:, 0]
        if self.a1_path is not None:
            out = out + self.a1_path(tau)
        return out

    def factors(self, TZ, rho: float):
        """Phase and amplitude (cutoff included) at chart points ``TZ`` of shape ``(m, 1+n)``."""
        TZ = np.atleast_2d(np.asarray(TZ, dtype=float))
        tau, z = TZ[:, 0], TZ[:, 1:]
        lo, hi = self.tau_range
        inside = (tau >= lo - 1e-12) & (tau <= hi + 1e-12)
        tc = np.clip(tau, lo, hi)
        tu, inv = np.unique(tc, return_inverse=True)
        phi_c, a0_c, a1_c = self.coeffs(tu)
        mono = self.space.monomials_at(z)
        phi = np.einsum("ij,ij->i", mono, phi_c[inv])
        a0 = np.einsum("ij,ij->i", mono, a0_c[inv])
        a1 = np.einsum("ij,ij->i", mono, a1_c[inv])
        if self.a1_path is not None:
            a1 = a1 + self.a1_path(tu)[inv]
        chi = cutoff(np.linalg.norm(z, axis=1) / self.delta)
        A = np.where(inside, chi * (a0 + a1 / rho), 0.0)
        return phi, A, inside

    def imag_phase_floor(self, taus=None) -> float:
        """Smallest eigenvalue of ``sign * Im H`` over ``taus``; positive for a valid beam."""
        taus = np.linspace(*self.tau_range, 21) if taus is None else taus
        return float(np.min(np.linalg.eigvalsh(self.sign * self.H_at(taus).imag)))


def _stitch(pieces):
    def fn(t):
        t = np.atleast_1d(t)
        out = None
        for lo, hi, f in pieces:
            sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
            if not np.any(sel):
                continue
            v = f(t[sel])
            if out is None:
                out = np.zeros((v.shape[0], len(t)), dtype=complex)
            out[:, sel] = v
        if out is None:
            raise ValueError("tau outside beam range")
        return out

    return fn


def _jet_beam(chart, order, delta, space, deg_a0, deg_a1, system, y0, tau0, tau_range, rtol, atol, H0=None,
              a1_path=None, meta=None, sign: int = 1) -> GaussianBeam:
    lo, hi = tau_range
    pieces = []
    for span in ((tau0, hi), (tau0, lo)):
        if span[1] != span[0]:
            s = solve_ivp(system, span, y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
            if s.status != 0:
                raise BeamError(f"jet integration failed: {s.message}")
            pieces.append((min(span), max(span), s.sol))
    if not pieces:
        raise BeamError("empty tau range")
    raw = _stitch(pieces)
    m = space.size

    def coeffs_fn(t):
        Y = raw(t).T
        return Y[:, :m], Y[:, m:2 * m], Y[:, 2 * m:]

    beam = GaussianBeam(chart, order, delta, space, deg_a0, deg_a1, (lo, hi), coeffs_fn, a1_path, system,
                        H0, meta or {}, sign)
    if beam.imag_phase_floor() <= 0:
        raise PositivityError("Im H lost positivity along the beam")
    return beam


def build_beam(chart: NullFrameChart, order: int = 0, H0=None, tau_range=(0.0, 1.0), q: Callable | None = None,
               delta: float = 1.0, a0_init: complex = 1.0, rtol: float = 1e-12, atol: float = 1e-14,
               tau0: float | None = None) -> GaussianBeam:
    """Order-``order`` beam in a flat null chart.

    The phase carries Taylor jets through degree ``order + 2``, ``a0`` through
    ``order`` and ``a1`` through ``order - 2`` (absent when negative).
    A negative definite ``Im H0`` gives the conjugate beam, to be evaluated
    with negative ``rho``.
    """
    if not chart.is_flat(np.linspace(*tau_range, 3)):
        raise ConfigurationError("higher-order jet beams require a flat chart; use beam_from_riccati")
    n = chart.n
    P = order + 2
    S = PolySpace(n, P)
    H0 = 1j * np.eye(n) if H0 is None else np.asarray(H0, dtype=complex)
    sign = _definite_sign(H0)
    phi0 = S.var(0) + S.quadratic(H0)
    a00 = S.const(a0_init)
    a10 = S.zero()
    system = _JetSystem(S, order, order - 2, q, chart)
    tau0 = tau_range[0] if tau0 is None else tau0
    y0 = np.concatenate((phi0, a00, a10))
    return _jet_beam(chart, order, delta, S, order, order - 2, system, y0, tau0, tau_range, rtol, atol, H0,
                     sign=sign)


def _definite_sign(H0) -> int:
    """``+1`` if ``Im H0`` is positive definite, ``-1`` if negative definite (negative frequencies)."""
    lam = np.linalg.eigvalsh(0.5 * (H0.imag + H0.imag.T))
    if np.min(lam) > 0:
        return 1
    if np.max(lam) < 0:
        return -1
    raise PositivityError("Im H0 must be definite")


def beam_from_riccati(chart, riccati: RiccatiSolution, a1: AmplitudePath | None = None,
                      delta: float = 1.0) -> GaussianBeam:
    """Quadratic-phase beam ``z^1 + z^T H z`` with ``a0 = det Y^{-1/2}`` on any chart."""
    n = riccati.C.shape[0]
    S = PolySpace(n, 2)
    a0 = amplitude_a0(riccati)
    lin = S.var(0)
    quad_idx = [(S.index[e], e) for e in S.exps if sum(e) == 2]

    def coeffs_fn(t):
        H = riccati.H_at(t)
        m = len(t)
        phi = np.tile(lin, (m, 1))
        for k, e in quad_idx:
            i, j = [v for v in range(n) for _ in range(e[v])]
            phi[:, k] = H[:, i, j] if i == j else 2 * H[:, i, j]
        A0 = np.zeros((m, S.size), dtype=complex)
        A0[:, 0] = a0(t)
        return phi, A0, np.zeros((m, S.size), dtype=complex)

    return GaussianBeam(chart, 0, delta, S, 0, -1, (riccati.tau[0], riccati.tau[-1]), coeffs_fn,
                        a1, None, riccati.H[0])


def evaluate_beam(beam: GaussianBeam, point, rho: float, spacetime: bool = False):
    """Beam value at chart points (or spacetime points when ``spacetime``).

    Returns ``(values, in_chart)``; values vanish outside ``|z| < delta/2`` and
    outside the chart's tau range.
    """
    P = np.atleast_2d(np.asarray(point, dtype=float))
    if spacetime:
        P = beam.chart.to_chart(P)
    phi, A, inside = beam.factors(P, rho)
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.where(A != 0, np.exp(1j * rho * phi) * A, 0.0)
    return val, inside


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------
_D1 = (np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, np.array([-2.0, -1.0, 1.0, 2.0]))
_D2 = (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))


@dataclass
class ResidualGrid:
    """Chart-coordinate grid around the ray: ``tau`` samples and ``L / sqrt(rho)`` transverse boxes."""

    n_tau: int = 24
    n_z: int = 48
    half_width: float = 5.0
    tau_margin: float = 0.01

    def points(self, beam: GaussianBeam, rho: float):
        lo, hi = beam.tau_range
        lo, hi = lo + self.tau_margin, hi - self.tau_margin
        tau = np.linspace(lo, hi, self.n_tau)
        L = self.half_width / math.sqrt(rho)
        zs = np.linspace(-L, L, self.n_z)
        n = beam.space.nv
        grids = np.meshgrid(tau, *([zs] * n), indexing="ij")
        TZ = np.stack([g.ravel() for g in grids], axis=1)
        w_tau = np.full(self.n_tau, (hi - lo) / (self.n_tau - 1))
        w_tau[[0, -1]] *= 0.5
        dz = zs[1] - zs[0]
        W = np.repeat(w_tau, self.n_z**n) * dz**n
        return TZ, W, dz


def apply_box(beam: GaussianBeam, TZ, rho: float, q: Callable | None = None, hs: float = 1e-3):
    """``(box_g + q)`` of the beam at chart points, via finite differences of its smooth factors."""
    G = beam.chart.chart_metric()
    Gi = np.linalg.inv(G)
    d = TZ.shape[1]
    phi, A, _ = beam.factors(TZ, rho)

    def fac(shift):
        p, a, _ = beam.factors(TZ + shift, rho)
        return p, a

    dphi = np.zeros((d,) + phi.shape, dtype=complex)
    dA = np.zeros_like(dphi)
    cache = {}
    for k in range(d):
        for w, o in zip(*_D1):
            e = np.zeros(d)
            e[k] = o * hs
            key = tuple(e)
            if key not in cache:
                cache[key] = fac(e)
            p, a = cache[key]
            dphi[k] += w * p / hs
            dA[k] += w * a / hs
    boxphi = np.zeros_like(phi)
    boxA = np.zeros_like(A)
    for i in range(d):
        for j in range(i, d):
            gij = Gi[i, j] if i == j else 2 * Gi[i, j]
            if abs(gij) < 1e-14:
                continue
            if i == j:
                for w, o in zip(*_D2):
                    e = np.zeros(d)
                    e[i] = o * hs
                    key = tuple(e)
                    if key not in cache:
                        cache[key] = fac(e)
                    p, a = cache[key]
                    boxphi += gij * w * p / hs**2
                    boxA += gij * w * a / hs**2
            else:
                for wi, oi in zip(*_D1):
                    for wj, oj in zip(*_D1):
                        e = np.zeros(d)
                        e[i] = oi * hs
                        e[j] = oj * hs
                        p, a = fac(e)
                        boxphi += gij * wi * wj * p / hs**2
                        boxA += gij * wi * wj * a / hs**2
    grad2 = np.einsum("ij,i...,j...->...", Gi, dphi, dphi)
    cross = np.einsum("ij,i...,j...->...", Gi, dphi, dA)
    bracket = -rho**2 * grad2 * A + 1j * rho * (2 * cross + boxphi * A) + boxA
    if q is not None:
        bracket = bracket + q(beam.chart.point(TZ)) * A
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(np.abs(bracket) > 0, np.exp(1j * rho * phi) * bracket, 0.0)


def beam_residual_norm(beam: GaussianBeam, metric: Metric, q: Callable | None, rho: float,
                       grid: ResidualGrid | None = None, chunk: int = 60000) -> float:
    """Discrete L2 norm of ``(box_g + q)`` applied to the beam over the chart neighbourhood."""
    grid = grid or ResidualGrid()
    if not isinstance(beam.chart, NullFrameChart):
        raise ConfigurationError("residual diagnostics are implemented for flat null charts")
    if metric is not beam.chart.metric and not np.allclose(metric.g(beam.chart.origin), beam.chart.metric.g(beam.chart.origin)):
        raise ConfigurationError("metric does not match the beam chart")
    TZ, W, dz = grid.points(beam, rho)
    need = 1.0 / (8 * math.sqrt(rho))
    if dz > need * (1 + 1e-9):
        raise ResolutionError(f"grid cell {dz:.3g} exceeds 1/(8 sqrt(rho)) = {need:.3g}; "
                              f"need n_z >= {int(math.ceil(2 * grid.half_width * 8)) + 1}")
    tot = 0.0
    for s in range(0, len(TZ), chunk):
        r = apply_box(beam, TZ[s:s + chunk], rho, q)
        tot += float(np.sum(np.abs(r) ** 2 * W[s:s + chunk]))
    return math.sqrt(tot * beam.chart.volume_factor)


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# ---------------------------------------------------------------------------
# reflection
# ---------------------------------------------------------------------------
def _picard_spacetime(beam: GaussianBeam, tau1: float):
    """Spacetime Taylor jets ``(Phi, A0, A1)`` at ``gamma(tau1)`` in variables ``(s, z)``."""
    S = beam.space
    n = S.nv
    P = S.D
    T = PolySpace(n + 1, P)
    phi_c, a0_c, a1_c = (c[0] for c in beam.coeffs(np.array([tau1])))
    emb = np.zeros((n, n + 1))
    emb[:, 1:] = np.eye(n)
    Phi0 = S.compose_affine(phi_c, emb, target=T)
    A00 = S.compose_affine(a0_c, emb, target=T)
    A10 = S.compose_affine(a1_c, emb, target=T)
    Phi = Phi0.copy()
    for _ in range(P + 1):
        d1 = T.deriv(Phi, 1)
        Sa = T.zero()
        for a in range(2, n + 1):
            da = T.deriv(Phi, a)
            Sa = Sa + T.mul(da, da)
        Phi_s = -T.mul(Sa, T.reciprocal(2 * d1))
        Phi = T.truncate(Phi0 + T.integrate(Phi_s, 0), P)
    d1 = T.deriv(Phi, 1)
    Phi_s = T.deriv(Phi, 0)
    inv = T.reciprocal(2 * d1)
    boxPhi = 2 * T.deriv(d1, 0) + sum((T.deriv(T.deriv(Phi, a), a) for a in range(2, n + 1)), T.zero())

    def transport(A_init, src, deg):
        A = A_init.copy()
        for _ in range(deg + 2):
            rest = 2 * T.mul(Phi_s, T.deriv(A, 1)) + T.mul(boxPhi, A) - src
            for a in range(2, n + 1):
                rest = rest + 2 * T.mul(T.deriv(Phi, a), T.deriv(A, a))
            A = T.truncate(A_init - T.integrate(T.mul(rest, inv), 0), deg)
        return A

    A0 = transport(A00, T.zero(), beam.deg_a0)
    if beam.deg_a1 >= 0:
        boxA0 = 2 * T.deriv(T.deriv(A0, 1), 0) + sum((T.deriv(T.deriv(A0, a), a) for a in range(2, n + 1)), T.zero())
        A1 = transport(A10, T.truncate(1j * boxA0, beam.deg_a1), beam.deg_a1)
    else:
        A1 = T.zero()
    return T, Phi, A0, A1


def _boundary_function(domain: Domain, face: int, p1_spatial: np.ndarray, T: PolySpace):
    """Defining function ``B`` (negative inside) as a polynomial in ``X - p1``."""
    n = T.nv - 1
    if domain.kind == "ball":
        c = np.asarray(domain.center)
        R = domain.radius
        lin = np.concatenate(([0.0], 2 * (p1_spatial - c))) / (2 * R)
        B = T.linear(lin)
        for i in range(n):
            xi = T.var(i + 1)
            B = B + T.mul(xi, xi) / (2 * R)
        return B
    axis, side = divmod(face, 2)
    lin = np.zeros(n + 1)
    lin[axis + 1] = -1.0 if side == 0 else 1.0
    return T.linear(lin)


@dataclass
class ReflectionData:
    tau1: float
    p1: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    B: np.ndarray
    space: PolySpace
    dnu_phi_inc: float
    dnu_phi_ref: float


def reflect_beam(incident: GaussianBeam, tau1: float, domain: Domain | None = None, face: int | None = None,
                 tau_range=(-0.5, 0.5), rtol: float = 1e-12, atol: float = 1e-14):
    """Reflected beam matching the incident one on the boundary at ``gamma(tau1)``.

    The reflected phase is ``psi = phi + B mu`` with ``B`` the boundary defining
    function, ``mu(p1)`` the second root of the eikonal, and higher jets of
    ``mu`` fixed order by order; amplitudes are ``-a_inc + B nu`` with ``nu``
    fixed by the transport equations of ``psi``.  Returns ``(beam, data)``; the
    reflected chart has ``tau = 0`` at the reflection point.
    """
    chart = incident.chart
    if not isinstance(chart, NullFrameChart):
        raise ConfigurationError("reflection implemented for flat null charts")
    metric = chart.metric
    domain = domain or metric.N
    p1 = chart.point(np.concatenate(([tau1], np.zeros(chart.n))))
    if face is None:
        face = int(np.argmin(np.abs(domain.levels(p1[1:]))))
    if abs(domain.levels(p1[1:])[face]) > 1e-8:
        raise BeamError("gamma(tau1) is not on the boundary")
    Tsp, Phi, A0, A1 = _picard_spacetime(incident, tau1)
    d = Tsp.nv
    Einv = np.linalg.inv(chart.E)
    phi = Tsp.compose_affine(Phi, Einv)
    a0 = Tsp.compose_affine(A0, Einv)
    a1 = Tsp.compose_affine(A1, Einv)
    B = _boundary_function(domain, face, p1[1:], Tsp)
    Gi = np.linalg.inv(metric.g(p1))
    P = Tsp.D

    def inner(f, h):
        df = Tsp.grad(f)
        dh = Tsp.grad(h)
        out = Tsp.zero()
        for i in range(d):
            for j in range(d):
                if Gi[i, j] != 0:
                    out = out + Gi[i, j] * Tsp.mul(df[i], dh[j])
        return out

    def grad0(f):
        return np.array([Tsp.deriv(f, i)[0] for i in range(d)])

    dphi0, dB0 = grad0(phi), grad0(B)
    gB = dB0 @ Gi @ dB0
    beta_inc = dphi0 @ Gi @ dB0
    if abs(beta_inc) < lorgeo.TOL_TANGENT:
        raise lorgeo.TangencyError("incident ray is tangent to the boundary")
    mu = Tsp.const(-2 * beta_inc / gB)
    dpsi0 = dphi0 + mu[0] * dB0
    beta = dpsi0 @ Gi @ dB0
    B1 = Tsp.part(B, 1)
    vpsi = Gi @ dpsi0

    def L(f):
        dd = Tsp.zero()
        for j in range(d):
            dd = dd + vpsi[j] * Tsp.deriv(f, j)
        return 2 * beta * f + 2 * Tsp.mul(B1, dd)

    def solve_degree(res_fn, unknown, k):
        idx = np.where(Tsp.deg == k)[0]
        r = res_fn(unknown)[idx]
        M = np.zeros((len(idx), len(idx)), dtype=complex)
        for c, i in enumerate(idx):
            e = Tsp.zero()
            e[i] = 1.0
            M[:, c] = L(e)[idx]
        sol = np.linalg.solve(M, -r)
        out = unknown.copy()
        out[idx] = sol
        return out

    def eik(m):
        psi = Tsp.truncate(phi + Tsp.mul(B, m), P)
        return inner(psi, psi)

    for k in range(1, P):
        mu = solve_degree(eik, mu, k)
    psi = Tsp.truncate(phi + Tsp.mul(B, mu), P)

    boxpsi = Tsp.zero()
    for i in range(d):
        for j in range(d):
            if Gi[i, j] != 0:
                boxpsi = boxpsi + Gi[i, j] * Tsp.deriv(Tsp.deriv(psi, i), j)

    def transport(b):
        return 2 * inner(psi, b) + Tsp.mul(boxpsi, b)

    def box(f):
        out = Tsp.zero()
        for i in range(d):
            for j in range(d):
                if Gi[i, j] != 0:
                    out = out + Gi[i, j] * Tsp.deriv(Tsp.deriv(f, i), j)
        return out

    N = incident.deg_a0
    nu0 = Tsp.zero()
    for k in range(0, N):
        nu0 = solve_degree(lambda v: transport(Tsp.truncate(-a0 + Tsp.mul(B, v), N)), nu0, k)
    b0 = Tsp.truncate(-a0 + Tsp.mul(B, nu0), N)
    N1 = incident.deg_a1
    if N1 >= 0:
        nu1 = Tsp.zero()
        for k in range(0, N1):
            nu1 = solve_degree(lambda v: transport(Tsp.truncate(-a1 + Tsp.mul(B, v), N1)) - 1j * box(b0), nu1, k)
        b1 = Tsp.truncate(-a1 + Tsp.mul(B, nu1), N1)
    else:
        b1 = Tsp.zero()

    # reflected chart along (d psi)^sharp
    v_ref = np.real_if_close(vpsi).astype(float)
    ref_chart = NullFrameChart.along(metric, p1, v_ref)
    S = incident.space
    A = ref_chart.E[:, 1:]
    phi_s = Tsp.compose_affine(psi, A, target=S)
    a0_s = Tsp.compose_affine(b0, A, target=S)
    a1_s = Tsp.compose_affine(b1, A, target=S)
    phi_s[np.abs(phi_s) < 1e-15] = 0
    system = _JetSystem(S, incident.deg_a0, incident.deg_a1, None, ref_chart)
    y0 = np.concatenate((phi_s, a0_s, a1_s))
    beam = _jet_beam(ref_chart, incident.order, incident.delta, S, incident.deg_a0, incident.deg_a1, system, y0,
                     0.0, tau_range, rtol, atol, meta={"reflected_at": tau1})
    nu = lorgeo.outward_normal(metric, domain, p1, face)
    data = ReflectionData(tau1, p1, mu, psi, b0, b1, B, Tsp, float(np.real(dphi0 @ nu)), float(np.real(dpsi0 @ nu)))
    return beam, data


def boundary_patch_points(domain: Domain, p1: np.ndarray, rho: float, n_pts: int = 24, half_width: float = 5.0,
                          width_scale: float = 1.0):
    """Quadrature points and weights on ``(0,T) x partial N`` around ``p1`` scaled by ``1/sqrt(rho)``."""
    L = half_width * width_scale / math.sqrt(rho)
    u = np.linspace(-L, L, n_pts)
    du = u[1] - u[0]
    n = len(p1) - 1
    if domain.kind == "ball":
        c = np.asarray(domain.center)
        R = domain.radius
        n1 = (p1[1:] - c) / R
        basis = np.linalg.svd(n1[None, :])[2][1:]  # orthonormal complement
        grids = np.meshgrid(u, *([u] * (n - 1)), indexing="ij")
        tt = grids[0].ravel()
        uv = np.stack([g.ravel() for g in grids[1:]], axis=1)
        dirs = n1 + uv @ basis
        nrm = np.linalg.norm(dirs, axis=1)
        xs = c + R * dirs / nrm[:, None]
        X = np.column_stack((p1[0] + tt, xs))
        jac = R ** (n - 1) / nrm**n
        W = jac * du**n
        return X, W
    raise ValueError("boundary patches implemented for ball domains")


def boundary_trace_norm(incident: GaussianBeam, reflected: GaussianBeam, domain: Domain, p1, rho: float,
                        n_pts: int = 24, half_width: float = 5.0) -> float:
    """L2 norm over a boundary patch of the summed Dirichlet traces of two beams."""
    X, W = boundary_patch_points(domain, np.asarray(p1), rho, n_pts, half_width)
    ui, _ = evaluate_beam(incident, X, rho, spacetime=True)
    ur, _ = evaluate_beam(reflected, X, rho, spacetime=True)
    return math.sqrt(float(np.sum(np.abs(ui + ur) ** 2 * W)))
