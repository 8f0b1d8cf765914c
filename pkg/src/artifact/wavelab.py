"""Finite-difference solver for ``box_g u + q u + a u^4 = F`` with Dirichlet data.

The operator is discretized in divergence form.  In 1+1 with
``P = sqrt|g| g^00``, ``Q = sqrt|g| g^01``, ``R = sqrt|g| g^11`` and
``W = sqrt|g|`` the equation reads

    d_t(P u_t + Q u_x) + d_x(Q u_t + R u_x) + W (q u + a u^4 - F) = 0.

For ``Q = 0`` the update is explicit leapfrog with ``P`` at half time steps
and ``R`` at half cells.  For ``Q != 0`` (pulled-back metrics) the mixed
terms are centered and each step solves a tridiagonal system.  A 1+2 solver
on boxes handles metrics with diagonal inverse.

Neumann data are ``d_nu u`` with ``nu`` the outward unit normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .lorgeo import Metric, PreconditionError, PullbackMetric, ScaledMetric, bump_jets


class ConfigError(ValueError):
    """Invalid grid or solver configuration."""


class DivergenceError(RuntimeError):
    """Field exceeded the blow-up cap."""

    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


class InconsistencyError(RuntimeError):
    """Two routes to the same quantity disagree beyond tolerance."""


# ---------------------------------------------------------------------------
# grids and signals
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[lo, hi]`` (or a box) with ``nt`` steps of size ``dt`` up to ``T``."""

    lo: tuple
    hi: tuple
    h: float
    dt: float
    T: float
    cfl: float
    faces: tuple = ()

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def nx(self) -> tuple:
        return tuple(int(round((b - a) / self.h)) + 1 for a, b in zip(self.lo, self.hi))

    @property
    def nt(self) -> int:
        return int(round(self.T / self.dt)) + 1

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def axis(self, k: int = 0) -> np.ndarray:
        return self.lo[k] + np.arange(self.nx[k]) * self.h


def make_grid(metric: Metric, h: float, T: float, cfl: float = 0.5, lo=None, hi=None, dt: float | None = None,
              nsample: int = 9) -> GridSpec:
    """Grid with ``dt = cfl * h / c_max``; ``c_max`` sampled over the spacetime box.

    An explicit ``dt`` is checked against the same bound.
    """
    if not 0 < cfl <= 0.9:
        raise ConfigError(f"cfl factor {cfl} must lie in (0, 0.9]")
    dom = metric.N
    if lo is None or hi is None:
        blo, bhi = dom.bounding_box()
        lo = tuple(blo) if lo is None else tuple(np.atleast_1d(lo))
        hi = tuple(bhi) if hi is None else tuple(np.atleast_1d(hi))
    lo = tuple(float(v) for v in np.atleast_1d(lo))
    hi = tuple(float(v) for v in np.atleast_1d(hi))
    for a, b in zip(lo, hi):
        n = (b - a) / h
        if abs(n - round(n)) > 1e-8:
            raise ConfigError(f"h={h} does not divide the interval [{a}, {b}]")
    axes = [np.linspace(0, T, nsample)] + [np.linspace(a, b, nsample) for a, b in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo) + 1)
    cmax = float(np.max(metric.char_speed(X)))
    bound = 0.9 * h / cmax
    if dt is None:
        dt = cfl * h / cmax
        dt = T / math.ceil(T / dt)
    elif dt > bound * (1 + 1e-12):
        raise ConfigError(f"dt={dt:.6g} violates the CFL bound dt <= 0.9 h / c_max = {bound:.6g}")
    else:
        cfl = dt * cmax / h
        if abs(T / dt - round(T / dt)) > 1e-8:
            raise ConfigError(f"dt={dt} does not divide T={T}")
    faces = tuple(range(2 * len(lo)))
    return GridSpec(lo, hi, float(h), float(dt), float(T), float(cfl), faces)


@dataclass
class DNSignal:
    """Dirichlet and Neumann time series per boundary face.

    In 1+1 ``dirichlet`` and ``neumann`` have shape ``(nfaces, nt)``; in 1+2
    they have shape ``(nfaces, nt, ns)`` with face coordinates ``s``.
    """

    t: np.ndarray
    face_ids: tuple
    dirichlet: np.ndarray
    neumann: np.ndarray
    s: tuple = ()

    def __sub__(self, other: "DNSignal") -> "DNSignal":
        return DNSignal(self.t, self.face_ids, self.dirichlet - other.dirichlet, self.neumann - other.neumann, self.s)

    def scaled(self, c: float) -> "DNSignal":
        return DNSignal(self.t, self.face_ids, c * self.dirichlet, c * self.neumann, self.s)

    def rows(self):
        """CSV rows ``face_id, t, dirichlet, neumann`` (1+1 layout)."""
        for k, fid in enumerate(self.face_ids):
            for i, t in enumerate(self.t):
                yield fid, t, self.dirichlet[k, i], self.neumann[k, i]


@dataclass
class WaveField:
    t: np.ndarray
    x: tuple
    u: np.ndarray
    stride: int = 1


def relative_l2(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def _field(v, X):
    """Evaluate a coefficient given as ``None``, a constant or a callable of ``X``."""
    if v is None:
        return np.zeros(X.shape[:-1])
    if callable(v):
        return np.broadcast_to(np.asarray(v(X), dtype=float), X.shape[:-1])
    return np.full(X.shape[:-1], float(v))


def _pts(t, x):
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    return np.stack((t, x), axis=-1)


# ---------------------------------------------------------------------------
# 1+1 solver
# ---------------------------------------------------------------------------
def _coeffs_1d(metric: Metric, X):
    g = metric.g(X)
    gi = np.linalg.inv(g)
    sq = np.sqrt(np.abs(np.linalg.det(g)))
    return sq * gi[..., 0, 0], sq * gi[..., 0, 1], sq * gi[..., 1, 1], sq, gi


def _boundary_values(f, t):
    if f is None:
        return 0.0
    if callable(f):
        return float(f(t))
    return float(f)


def _solve_1d(metric, q, a, F, f, grid: GridSpec, store: bool, stride: int, blowup_cap: float,
              force_implicit: bool = False):
    x = grid.axis(0)
    h, dt, nt = grid.h, grid.dt, grid.nt
    nx = len(x)
    xh = 0.5 * (x[1:] + x[:-1])
    f = list(f) if f is not None else [None, None]
    if len(f) != 2:
        raise ConfigError("1+1 problems need Dirichlet data for two faces (None allowed)")
    # detect mixed terms on a coarse sample
    Xs = _pts(np.linspace(0, grid.T, 7)[:, None], x[None, :: max(1, nx // 16)])
    implicit = force_implicit or bool(np.max(np.abs(_coeffs_1d(metric, Xs)[1])) > 0)
    u_prev = np.zeros(nx)
    u = np.zeros(nx)
    hist = [u.copy()] if store else None
    bcols = np.zeros((nt, 6))
    for n in range(nt - 1):
        tn = n * dt
        Xn = _pts(tn, x)
        _, Qn, _, Wn, _ = _coeffs_1d(metric, Xn)
        Rh = _coeffs_1d(metric, _pts(tn, xh))[2]
        Pp = _coeffs_1d(metric, _pts(tn + 0.5 * dt, x))[0]
        Pm = _coeffs_1d(metric, _pts(tn - 0.5 * dt, x))[0]
        flux = Rh * np.diff(u) / h
        Lu = np.zeros(nx)
        Lu[1:-1] = np.diff(flux) / h
        react = Wn * (_field(q, Xn) * u + _field(a, Xn) * u**4 - _field(F, Xn))
        if not implicit:
            un = u + (Pm * (u - u_prev) - dt * dt * (Lu + react)) / Pp
        else:
            # variational discretisation of d_t(Q u_x) + d_x(Q u_t): Q lives on
            # space-time cell centres, so the discrete energy is conserved
            Qp = _coeffs_1d(metric, _pts(tn + 0.5 * dt, xh))[1]
            Qm = _coeffs_1d(metric, _pts(tn - 0.5 * dt, xh))[1]
            c = 1.0 / (2 * h * dt)
            diag = Pp / dt**2
            up = np.zeros(nx)
            lo_ = np.zeros(nx)
            up[1:-1] = c * Qp[1:]
            lo_[1:-1] = -c * Qp[:-1]
            am = (u[:-1] + u[1:] - u_prev[:-1] - u_prev[1:]) / (2 * dt)
            bm = (u[1:] - u[:-1] + u_prev[1:] - u_prev[:-1]) / (2 * h)
            t3 = Qm * (bm / (2 * dt) - am / (2 * h))
            t4 = Qm * (bm / (2 * dt) + am / (2 * h))
            const = np.zeros(nx)
            const[1:-1] = c * (Qp[1:] - Qp[:-1]) * u[1:-1] + t3[1:] + t4[:-1]
            rhs = (Pp * u + Pm * (u - u_prev)) / dt**2 - Lu - react + const
            ab = np.zeros((3, nx))
            ab[1] = diag
            ab[0, 1:] = up[:-1]
            ab[2, :-1] = lo_[1:]
            ab[1, 0] = ab[1, -1] = 1.0
            ab[0, 1] = 0.0
            ab[2, -2] = 0.0
            rhs[0] = rhs[-1] = 0.0
            un = solve_banded((1, 1), ab, rhs)
        tn1 = tn + dt
        un[0] = _boundary_values(f[0], tn1)
        un[-1] = _boundary_values(f[1], tn1)
        if not np.all(np.isfinite(un)) or np.max(np.abs(un)) > blowup_cap:
            raise DivergenceError(f"|u| exceeded {blowup_cap:g} at step {n + 1} (t={tn1:.6g})", n + 1)
        u_prev, u = u, un
        bcols[n + 1] = (u[0], u[1], u[2], u[-1], u[-2], u[-3])
        if store and (n + 1) % stride == 0:
            hist.append(u.copy())
    t = grid.t
    neu = np.zeros((2, nt))
    ut0 = np.gradient(bcols[:, 0], dt, edge_order=2)
    ut1 = np.gradient(bcols[:, 3], dt, edge_order=2)
    ux0 = (-3 * bcols[:, 0] + 4 * bcols[:, 1] - bcols[:, 2]) / (2 * h)
    ux1 = (3 * bcols[:, 3] - 4 * bcols[:, 4] + bcols[:, 5]) / (2 * h)
    for k, (xb, ut, ux, sgn) in enumerate(((x[0], ut0, ux0, -1.0), (x[-1], ut1, ux1, 1.0))):
        gi = np.linalg.inv(metric.g(_pts(t, np.full(nt, xb))))
        neu[k] = sgn * (gi[:, 1, 0] * ut + gi[:, 1, 1] * ux) / np.sqrt(gi[:, 1, 1])
    dn = DNSignal(t, (0, 1), bcols[:, [0, 3]].T.copy(), neu)
    wf = WaveField(t[::stride] if store else t, (x,), np.array(hist) if store else u, stride) if store else None
    return wf, dn


# ---------------------------------------------------------------------------
# 1+2 solver (boxes, diagonal inverse metric)
# ---------------------------------------------------------------------------
def _coeffs_2d(metric: Metric, X):
    g = metric.g(X)
    gi = np.linalg.inv(g)
    sq = np.sqrt(np.abs(np.linalg.det(g)))
    return sq * gi[..., 0, 0], sq * gi[..., 1, 1], sq * gi[..., 2, 2], sq, gi


def _solve_2d(metric, q, a, F, f, grid: GridSpec, store: bool, stride: int, blowup_cap: float):
    x, y = grid.axis(0), grid.axis(1)
    h, dt, nt = grid.h, grid.dt, grid.nt
    Xg, Yg = np.meshgrid(x, y, indexing="ij")
    probe = metric.g(np.stack((np.full(Xg.shape, 0.5 * grid.T), Xg, Yg), axis=-1))
    if np.max(np.abs(probe[..., 0, 1:])) > 0 or np.max(np.abs(probe[..., 1, 2])) > 0:
        raise ConfigError("the 1+2 solver needs a metric with diagonal components")
    f = list(f) if f is not None else [None] * 4
    if len(f) != 4:
        raise ConfigError("1+2 box problems need Dirichlet data for four faces")
    face_s = (y, y, x, x)

    def P3(t, A, B):
        return np.stack((np.full(A.shape, t), A, B), axis=-1)

    u_prev = np.zeros(Xg.shape)
    u = np.zeros(Xg.shape)
    hist = [u.copy()] if store else None
    bnd = [np.zeros((nt, 3, len(s))) for s in face_s]

    def set_bc(v, t):
        vals = [np.broadcast_to(f[k](t, face_s[k]) if callable(f[k]) else (0.0 if f[k] is None else f[k]),
                                face_s[k].shape) for k in range(4)]
        v[0, :], v[-1, :], v[:, 0], v[:, -1] = vals

    for n in range(nt - 1):
        tn = n * dt
        Xn = P3(tn, Xg, Yg)
        Wn = _coeffs_2d(metric, Xn)[3]
        Pp = _coeffs_2d(metric, P3(tn + 0.5 * dt, Xg, Yg))[0]
        Pm = _coeffs_2d(metric, P3(tn - 0.5 * dt, Xg, Yg))[0]
        xh = 0.5 * (Xg[1:] + Xg[:-1])
        yh = 0.5 * (Yg[:, 1:] + Yg[:, :-1])
        R1 = _coeffs_2d(metric, P3(tn, xh, Yg[1:]))[1]
        R2 = _coeffs_2d(metric, P3(tn, Xg[:, 1:], yh))[2]
        Lu = np.zeros_like(u)
        fx = R1 * np.diff(u, axis=0) / h
        fy = R2 * np.diff(u, axis=1) / h
        Lu[1:-1, :] += np.diff(fx, axis=0) / h
        Lu[:, 1:-1] += np.diff(fy, axis=1) / h
        react = Wn * (_field(q, Xn) * u + _field(a, Xn) * u**4 - _field(F, Xn))
        un = u + (Pm * (u - u_prev) - dt * dt * (Lu + react)) / Pp
        set_bc(un, tn + dt)
        if not np.all(np.isfinite(un)) or np.max(np.abs(un)) > blowup_cap:
            raise DivergenceError(f"|u| exceeded {blowup_cap:g} at step {n + 1}", n + 1)
        u_prev, u = u, un
        bnd[0][n + 1] = u[0:3, :]
        bnd[1][n + 1] = u[[-1, -2, -3], :]
        bnd[2][n + 1] = u[:, 0:3].T
        bnd[3][n + 1] = u[:, [-1, -2, -3]].T
        if store and (n + 1) % stride == 0:
            hist.append(u.copy())
    t = grid.t
    dirs, neus = [], []
    for k in range(4):
        b = bnd[k]
        dn_inward = (-3 * b[:, 0] + 4 * b[:, 1] - b[:, 2]) / (2 * h)
        axis = k // 2
        xb = (x[0] if k == 0 else x[-1]) if axis == 0 else None
        yb = (y[0] if k == 2 else y[-1]) if axis == 1 else None
        s = face_s[k]
        TT, SS = np.meshgrid(t, s, indexing="ij")
        X = np.stack((TT, np.full(TT.shape, xb), SS), -1) if axis == 0 else np.stack((TT, SS, np.full(TT.shape, yb)), -1)
        gi = np.linalg.inv(metric.g(X))
        gnn = gi[..., axis + 1, axis + 1]
        # outward derivative = -(inward derivative), scaled to the unit normal
        neus.append(-dn_inward * np.sqrt(gnn))
        dirs.append(b[:, 0])
    dn = DNSignal(t, (0, 1, 2, 3), np.array(dirs), np.array(neus), face_s)
    wf = WaveField(t[::stride], (x, y), np.array(hist), stride) if store else None
    return wf, dn


def solve_semilinear(metric: Metric, q=None, a=None, f=None, grid: GridSpec | None = None, F=None,
                     store: bool = False, stride: int = 1, blowup_cap: float = 1e6):
    """Solve ``box_g u + q u + a u^4 = F`` with zero initial data and Dirichlet data ``f``.

    ``f`` lists one entry per face (callable of ``t`` in 1+1, of ``(t, s)`` in
    1+2, a constant, or ``None``).  Returns ``(WaveField or None, DNSignal)``.
    """
    if grid is None:
        raise ConfigError("a GridSpec is required")
    if grid.dim == 1:
        return _solve_1d(metric, q, a, F, f, grid, store, stride, blowup_cap)
    if grid.dim == 2:
        return _solve_2d(metric, q, a, F, f, grid, store, stride, blowup_cap)
    raise ConfigError("solver supports 1+1 and 1+2")


def solve_linear(metric: Metric, q=None, F=None, f=None, grid: GridSpec | None = None, **kw):
    return solve_semilinear(metric, q, None, f, grid, F=F, **kw)


def discrete_energy(metric: Metric, grid: GridSpec, u_prev: np.ndarray, u: np.ndarray, t: float) -> float:
    """Leapfrog-conserved energy between levels for time-independent 1+1 metrics with ``g^01 = 0``."""
    x = grid.axis(0)
    h, dt = grid.h, grid.dt
    P = _coeffs_1d(metric, _pts(t - 0.5 * dt, x))[0]
    xh = 0.5 * (x[1:] + x[:-1])
    R = _coeffs_1d(metric, _pts(t, xh))[2]
    kin = 0.5 * np.sum(-P * ((u - u_prev) / dt) ** 2) * h
    pot = 0.5 * np.sum(R * (np.diff(u) / h) * (np.diff(u_prev) / h)) * h
    return float(kin + pot)


# ---------------------------------------------------------------------------
# pulses
# ---------------------------------------------------------------------------
def smooth_pulse(t0: float, width: float, amp: float = 1.0) -> Callable:
    """``amp * bump`` supported in ``(t0, t0 + width)``; vectorized in ``t``."""

    def f(t, s=None):
        r = (np.asarray(t, float) - t0 - 0.5 * width) / (0.5 * width)
        inside = np.abs(r) < 1
        rr = np.where(inside, r, 0.0)
        val = np.where(inside, amp * np.exp(1.0 - 1.0 / (1.0 - rr * rr)), 0.0)
        if s is not None:
            val = val * np.ones_like(np.asarray(s, float))
        return val if np.ndim(val) else float(val)

    return f


# ---------------------------------------------------------------------------
# linearizations
# ---------------------------------------------------------------------------
def _combine(fs: Sequence, weights: Sequence[float]):
    fs = list(fs)
    nf = len(fs[0])

    def face(k):
        parts = [(w, fl[k]) for w, fl in zip(weights, fs) if fl[k] is not None and w != 0]
        if not parts:
            return None
        return lambda *args: sum(w * (g(*args) if callable(g) else g) for w, g in parts)

    return [face(k) for k in range(nf)]


def dn_linearized(metric: Metric, q, a, f, grid: GridSpec, eps: float = 1e-3, check: bool = True,
                  rel_tol: float = 1e-6) -> DNSignal:
    """``(Lambda(eps f) - Lambda(-eps f)) / (2 eps)``, checked against a direct linear solve."""
    _, dp = solve_semilinear(metric, q, a, _combine([f], [eps]), grid)
    _, dm = solve_semilinear(metric, q, a, _combine([f], [-eps]), grid)
    out = (dp - dm).scaled(1.0 / (2 * eps))
    if check:
        _, lin = solve_linear(metric, q, None, f, grid)
        scale = max(np.max(np.abs(lin.neumann)), 1e-300)
        err = np.max(np.abs(out.neumann - lin.neumann)) / scale
        if err > rel_tol:
            raise InconsistencyError(f"linearized DN map differs from the direct linear solve (rel {err:.3e})")
    return out


def dn_fourth_mixed(metric: Metric, q, a, fs: Sequence, grid: GridSpec, eps=0.05) -> DNSignal:
    """Mixed fourth derivative of the DN map by the 16-point sign stencil."""
    eps = np.broadcast_to(np.asarray(eps, float), (4,))
    acc = None
    for signs in np.ndindex(2, 2, 2, 2):
        sg = np.array([1.0 if s == 0 else -1.0 for s in signs])
        _, d = solve_semilinear(metric, q, a, _combine(fs, sg * eps), grid)
        term = d.scaled(float(np.prod(sg)))
        acc = term if acc is None else DNSignal(acc.t, acc.face_ids, acc.dirichlet + term.dirichlet,
                                                acc.neumann + term.neumann, acc.s)
    return acc.scaled(1.0 / (16 * float(np.prod(eps))))


def cascade_fourth(metric: Metric, q, a, fs: Sequence, grid: GridSpec, factor: float = -24.0,
                   return_fields: bool = False):
    """Neumann trace of ``w`` solving ``box w + q w = factor * a v1 v2 v3 v4`` with zero data."""
    vs = [solve_linear(metric, q, None, fl, grid, store=True)[0].u for fl in fs]
    prod = vs[0] * vs[1] * vs[2] * vs[3]
    if grid.dim != 1:
        raise ConfigError("cascade implemented in 1+1")
    dt = grid.dt

    def F(X):
        n = int(round(X[0, 0] / dt))
        n = min(max(n, 0), prod.shape[0] - 1)
        return factor * _field(a, X) * prod[n]

    _, d = solve_linear(metric, q, F, None, grid)
    return (d, vs) if return_fields else d


def factor_regression(stencil: DNSignal, unit_cascade: DNSignal) -> float:
    """Least-squares ``c`` with ``stencil ~ c * unit_cascade`` over all Neumann samples."""
    s = stencil.neumann.ravel()
    c = unit_cascade.neumann.ravel()
    return float(s @ c / (c @ c))


def quartic_scaling(metric: Metric, q, a, f, grid: GridSpec, eps_list=(1e-2, 5e-3, 2.5e-3)):
    """Fitted exponent of ``||u_eps - eps u_lin||`` (Neumann traces) against ``eps``."""
    _, lin = solve_linear(metric, q, None, f, grid)
    errs = []
    for e in eps_list:
        _, d = solve_semilinear(metric, q, a, _combine([f], [e]), grid)
        errs.append(float(np.linalg.norm(d.neumann - e * lin.neumann)))
    slope = float(np.polyfit(np.log(eps_list), np.log(errs), 1)[0])
    return slope, errs


# ---------------------------------------------------------------------------
# invariance checks
# ---------------------------------------------------------------------------
@dataclass
class Diffeo:
    """``psi(X) = X + amp * b(X) * direction`` with ``b`` a compact spacetime bump."""

    amp: float
    center: tuple
    width: float
    direction: tuple = (0.0, 1.0)

    def psi(self, X):
        X = np.asarray(X, float)
        b, _, _ = bump_jets(X, self.amp, self.center, self.width)
        return X + b[..., None] * np.asarray(self.direction)

    def dpsi(self, X):
        X = np.asarray(X, float)
        _, db, _ = bump_jets(X, self.amp, self.center, self.width)
        d = len(self.direction)
        return np.eye(d) + np.asarray(self.direction)[:, None] * db[..., None, :]


@dataclass
class TimeShift:
    """``psi(t, x) = (t + amp * s(x), x)`` with ``s`` smooth and nonzero on the boundary."""

    amp: float
    T: float

    def _s(self, X):
        """Shift ``s`` with its ``t`` and ``x`` derivatives."""
        X = np.asarray(X, float)
        t, x = X[..., 0], X[..., 1]
        tt = np.clip(t / self.T, 0, 1)
        prof = np.sin(np.pi * tt) ** 2
        s = self.amp * prof * (1 + 0.5 * x)
        st = self.amp * np.pi / self.T * np.sin(2 * np.pi * tt) * (1 + 0.5 * x)
        sx = 0.5 * self.amp * prof
        return s, st, sx

    def psi(self, X):
        s = self._s(X)[0]
        out = np.array(X, float, copy=True)
        out[..., 0] += s
        return out

    def dpsi(self, X):
        _, st, sx = self._s(X)
        X = np.asarray(X, float)
        J = np.broadcast_to(np.eye(2), X.shape[:-1] + (2, 2)).copy()
        J[..., 0, 0] += st
        J[..., 0, 1] += sx
        return J


@dataclass
class InvarianceReport:
    value: float
    h: float
    dt: float
    extra: dict = field(default_factory=dict)


def _dn_discrepancy(d1: DNSignal, d2: DNSignal) -> float:
    return relative_l2(d1.neumann, d2.neumann)


def diffeo_invariance_check(metric: Metric, a, psi, f, grid: GridSpec, q=None, check: bool = True) -> InvarianceReport:
    """Relative L2 difference of ``Lambda_{g,a} f`` and ``Lambda_{psi^* g, psi^* a} f``."""
    if check:
        ts = np.linspace(0, grid.T, 11)
        for xb in (grid.lo[0], grid.hi[0]):
            Xb = _pts(ts, np.full(len(ts), xb))
            if np.max(np.abs(psi.psi(Xb) - Xb)) > 1e-12 or np.max(np.abs(psi.dpsi(Xb) - np.eye(2))) > 1e-12:
                raise PreconditionError("diffeomorphism must equal the identity near the boundary")
    pb = PullbackMetric(n=metric.n, N=metric.N, N1=metric.N1, T=metric.T, name="pullback", base=metric,
                        psi=psi.psi, dpsi=psi.dpsi)

    def pull(c):
        if c is None or not callable(c):
            return c
        return lambda X: c(psi.psi(X))

    _, d0 = solve_semilinear(metric, q, a, f, grid)
    g2 = make_grid(pb, grid.h, grid.T, lo=grid.lo, hi=grid.hi, dt=grid.dt)
    _, d1 = solve_semilinear(pb, pull(q), pull(a), f, g2)
    return InvarianceReport(_dn_discrepancy(d1, d0), grid.h, grid.dt, {"norm": float(np.linalg.norm(d0.neumann))})


def conformal_weights(d: int, beta_val):
    """``(v/u, a-factor, q-factor)`` for ``g -> exp(-2 beta) g`` in spacetime dimension ``d``."""
    w = 0.5 * (d - 2)
    return np.exp(w * beta_val), np.exp((2 - 3 * w) * beta_val), np.exp(2 * beta_val)


def travelling_beta(amp: float = 0.1, shift: float = 0.2, width: float = 0.15) -> Callable:
    """1+1 jets of ``beta`` with ``exp(-beta) = 1 + amp * bump(x - t - shift)``.

    ``exp(-beta)`` is a right-moving flat wave, so ``box_eta exp(-beta) = 0``.
    """
    def beta(X):
        X = np.asarray(X, float)
        s = (X[..., 1] - X[..., 0] - shift)[..., None]
        b, db, d2b = bump_jets(s, amp, [0.0], width)
        e = 1.0 + b
        b1 = db[..., 0] / e
        val = -np.log(e)
        d1 = -b1
        d2 = -d2b[..., 0, 0] / e + b1**2
        ds = np.array([-1.0, 1.0])
        return val, d1[..., None] * ds, d2[..., None, None] * np.outer(ds, ds)

    return beta


def constant_beta(value: float) -> Callable:
    """Constant ``beta``; nonzero values violate the boundary condition (negative control)."""
    def beta(X):
        X = np.asarray(X, float)
        d = X.shape[-1]
        return np.full(X.shape[:-1], float(value)), np.zeros(X.shape), np.zeros(X.shape + (d,))

    return beta


def conformal_invariance_check(metric: Metric, a, beta: Callable, f, grid: GridSpec, q=None,
                               check: bool = True, tol: float = 1e-10, box_tol: float = 1e-6,
                               box_h: float = 1e-3) -> InvarianceReport:
    """Compare ``Lambda_{g,a}`` with ``Lambda`` of ``exp(-2 beta) g`` and the transformed coefficients.

    ``beta(X)`` returns ``(beta, dbeta, d2beta)``.  In dimension ``d`` the
    coefficient rule is ``a -> exp((2 - 3w) beta) a`` and
    ``q -> exp(2 beta) q + q~`` with ``w = (d - 2)/2`` and
    ``q~ = exp((w + 2) beta) box_g exp(-w beta)``; ``q~`` vanishes when ``d = 2``.
    """
    d = metric.dim
    if d != 2:
        raise ConfigError("the DN comparison runs in 1+1; use conformal_identity_residual in higher dimensions")
    w = 0.5 * (d - 2)
    ts = np.linspace(0, grid.T, 41)
    traces = []
    for xb in (grid.lo[0], grid.hi[0]):
        Xb = _pts(ts, np.full(len(ts), xb))
        b, db, _ = beta(Xb)
        traces.append((np.max(np.abs(b)), np.max(np.abs(db[..., 1]))))
    if check:
        for k, (bv, dnv) in enumerate(traces):
            if bv > tol:
                raise PreconditionError(f"beta does not vanish on boundary face {k} (max {bv:.3e})")
            if w != 0 and dnv > tol:
                raise PreconditionError(f"normal derivative of beta does not vanish on face {k}")
        xs = np.linspace(grid.lo[0], grid.hi[0], 33)[1:-1]
        Xi = _pts(np.linspace(0, grid.T, 17)[1:-1, None], xs[None, :]).reshape(-1, 2)
        wave = box_fd(metric, lambda Y: np.exp(-beta(Y)[0]), Xi, h=box_h)
        if np.max(np.abs(wave)) > box_tol:
            raise PreconditionError(f"box_g exp(-beta) does not vanish (max {np.max(np.abs(wave)):.3e})")
    sig = lambda X: tuple(-v for v in beta(X))
    gs = ScaledMetric(n=metric.n, N=metric.N, N1=metric.N1, T=metric.T, name="conformal", base=metric, sigma_jets=sig)

    def a_new(X):
        return conformal_weights(d, beta(X)[0])[1] * _field(a, X)

    def q_new(X):
        return conformal_weights(d, beta(X)[0])[2] * _field(q, X)

    _, d0 = solve_semilinear(metric, q, a, f, grid)
    g2 = make_grid(gs, grid.h, grid.T, lo=grid.lo, hi=grid.hi, dt=grid.dt)
    _, d1 = solve_semilinear(gs, q_new if q is not None else None, a_new if a is not None else None, f, g2)
    return InvarianceReport(_dn_discrepancy(d1, d0), grid.h, grid.dt,
                            {"beta_trace": max(t[0] for t in traces), "dnu_beta": max(t[1] for t in traces)})


def box_fd(metric: Metric, u: Callable, X, h: float = 1e-3) -> np.ndarray:
    """``box_g u`` at points ``X`` by nested central differences of the divergence form."""
    X = np.asarray(X, float)
    d = X.shape[-1]

    def flux(Y, j):
        g = metric.g(Y)
        gi = np.linalg.inv(g)
        sq = np.sqrt(np.abs(np.linalg.det(g)))
        out = 0.0
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            du = (u(Y + e) - u(Y - e)) / (2 * h)
            out = out + gi[..., j, k] * du
        return sq * out

    sq0 = np.sqrt(np.abs(np.linalg.det(metric.g(X))))
    acc = 0.0
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        acc = acc + (flux(X + e, j) - flux(X - e, j)) / (2 * h)
    return acc / sq0


def conformal_identity_residual(metric: Metric, beta: Callable, v: Callable, X, h: float = 1e-3) -> float:
    """Max of ``|exp((w+2)b) box_g(exp(-w b) v) - box_{exp(-2b) g} v - q~ v|`` over ``X``."""
    d = metric.dim
    w = 0.5 * (d - 2)
    b = lambda Y: beta(Y)[0]
    gs = ScaledMetric(n=metric.n, N=metric.N, N1=metric.N1, T=metric.T, base=metric,
                      sigma_jets=lambda Y: tuple(-c for c in beta(Y)))
    lhs = np.exp((w + 2) * b(X)) * box_fd(metric, lambda Y: np.exp(-w * b(Y)) * v(Y), X, h)
    qt = np.exp((w + 2) * b(X)) * box_fd(metric, lambda Y: np.exp(-w * b(Y)), X, h)
    rhs = box_fd(gs, v, X, h) + qt * v(X)
    return float(np.max(np.abs(lhs - rhs)))


def fitted_order(hs, values) -> float:
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


# ---------------------------------------------------------------------------
# scattering control
# ---------------------------------------------------------------------------
@dataclass
class ControlReport:
    passes: int
    mismatch: list
    uncontrolled: float
    f_entry: np.ndarray
    f_exit: np.ndarray
    t: np.ndarray
    long_mismatch: list = field(default_factory=list)


def scattering_control(metric: Metric, pulse: Callable, grid: GridSpec, passes: int = 1, margin: float | None = None,
                       window: tuple | None = None, long_window: tuple | None = None, q=None) -> ControlReport:
    """Time-domain control of the reflection at the exit face of ``[lo, hi]`` (1+1).

    The free field ``u0`` is a right-moving wave sent from the Dirichlet face
    of an extended interval ``[lo - margin, hi + margin]``.  Pass 0 drives the
    entry face with ``u0``'s trace.  Each pass measures the Neumann signal at
    the exit face, removes ``u0``'s own Neumann trace, integrates the rest in
    time with the characteristic speed to get the reflected Dirichlet trace,
    and subtracts it from the exit data.

    ``margin`` defaults to the gap between the inner and extended domains.
    Mismatches are relative L2 over ``window``; ``long_window`` adds a
    second list measured over that (longer) time window.
    """
    if grid.dim != 1:
        raise ConfigError("scattering control implemented in 1+1")
    lo, hi = grid.lo[0], grid.hi[0]
    if margin is None:
        margin = float(lo - metric.N1.lo[0])
    if margin <= 0:
        raise ConfigError("the pulse needs an exterior margin (extended domain equals the inner one)")
    ext = make_grid(metric, grid.h, grid.T, lo=lo - margin, hi=hi + margin, dt=grid.dt)
    wf0, _ = solve_linear(metric, q, None, [pulse, None], ext, store=True)
    i0 = int(round((lo - ext.lo[0]) / grid.h))
    i1 = int(round((hi - ext.lo[0]) / grid.h))
    U0 = wf0.u[:, i0:i1 + 1]
    t = grid.t
    f_entry = U0[:, 0].copy()
    if np.max(np.abs(f_entry)) == 0:
        return ControlReport(0, [], 0.0, f_entry, np.zeros_like(t), t)
    # predicted Neumann of u0 at the exit face, one-sided in the interior plus the exit column
    h = grid.h
    g_exit = np.linalg.inv(metric.g(_pts(t, np.full(len(t), hi))))
    ux = (3 * U0[:, -1] - 4 * U0[:, -2] + U0[:, -3]) / (2 * h)
    ut = np.gradient(U0[:, -1], grid.dt, edge_order=2)
    n0 = (g_exit[:, 1, 0] * ut + g_exit[:, 1, 1] * ux) / np.sqrt(g_exit[:, 1, 1])
    # reflected trace rho(t) satisfies d_nu r = sqrt(-g^00) rho' on the exit face
    speed = 1.0 / np.sqrt(-g_exit[:, 0, 0])
    f_exit = np.zeros_like(t)

    def interp(arr):
        return lambda s: float(np.interp(s, t, arr))

    win = window or (0.0, grid.T)
    lwin = long_window or (0.0, grid.T)
    sel = (t >= win[0]) & (t <= win[1])
    lsel = (t >= lwin[0]) & (t <= lwin[1])

    def mismatch(U, m=sel):
        return relative_l2(U[m], U0[m])

    U, _ = solve_linear(metric, q, None, [interp(f_entry), None], grid, store=True)
    base_mismatch = mismatch(U.u)
    out = []
    lout = []
    for _ in range(passes):
        wf, dn = solve_linear(metric, q, None, [interp(f_entry), interp(f_exit)], grid, store=True)
        nref = dn.neumann[1] - n0
        R = np.concatenate(([0.0], np.cumsum(0.5 * (nref[1:] + nref[:-1]) * speed[1:] * grid.dt)))
        f_exit = f_exit - R
        wf, _ = solve_linear(metric, q, None, [interp(f_entry), interp(f_exit)], grid, store=True)
        out.append(mismatch(wf.u))
        lout.append(mismatch(wf.u, lsel))
    return ControlReport(passes, out, base_mismatch, f_entry, f_exit, t, lout)
