"""Boundary geometric optics in boundary normal coordinates.

The chart metric is ``g = g_{ab}(y, x_n) dy^a dy^b + dx_n^2`` with ``y`` the
boundary coordinates (``y_0 = t``).  Chart metrics expose the inverse
tangential block ``Gi(y, xn)`` and its derivatives.

The phase is marched as a tangential Taylor polynomial of order 2 around a
base point, ``phi = phi0(xn) + p(xn).y + 1/2 y.P(xn).y``, from the boundary
condition ``phi = y.xi`` and the outgoing root ``d_n phi = -sqrt(-Gi(w, w))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .lorgeo import PreconditionError, ProductMetric, static_profile_speed


class CausalityError(PreconditionError):
    """``xi_n^2 <= 0``: the covector is not timelike for the boundary metric."""


class ConditioningError(ValueError):
    """Rank-deficient least-squares design."""


# ---------------------------------------------------------------------------
# chart metrics
# ---------------------------------------------------------------------------
class ChartMetric:
    """Tangential inverse metric ``Gi(y, xn)`` of a boundary normal chart."""

    m: int

    def Gi(self, y, xn: float) -> np.ndarray:
        raise NotImplementedError

    def dGi_y(self, y, xn: float) -> np.ndarray:
        """``[k, a, b] = d_{y_k} Gi^{ab}``."""
        return _fd_y(lambda yy: self.Gi(yy, xn), np.asarray(y, float), 1e-4)

    def d2Gi_y(self, y, xn: float) -> np.ndarray:
        """``[k, l, a, b] = d_{y_k} d_{y_l} Gi^{ab}``."""
        return _fd_y(lambda yy: self.dGi_y(yy, xn), np.asarray(y, float), 1e-3)

    def dGi_n(self, y, xn: float) -> np.ndarray:
        h = 1e-4
        w = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
        o = np.array([-2.0, -1.0, 1.0, 2.0])
        if xn < 2 * h:  # one-sided near the boundary
            w = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
            o = np.arange(5.0)
        return sum(wi * self.Gi(y, xn + oi * h) for wi, oi in zip(w, o)) / h

    def dlogdet_y(self, y, xn: float) -> np.ndarray:
        """``d_{y_k} log|det g|`` of the full metric (``det g = 1/det Gi``)."""
        Ginv = np.linalg.inv(self.Gi(y, xn))
        return -np.einsum("ab,kba->k", Ginv, self.dGi_y(y, xn))

    def dlogdet_n(self, y, xn: float) -> float:
        Ginv = np.linalg.inv(self.Gi(y, xn))
        return float(-np.trace(Ginv @ self.dGi_n(y, xn)))


def _fd_y(f: Callable, y: np.ndarray, h: float) -> np.ndarray:
    w = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
    o = np.array([-2.0, -1.0, 1.0, 2.0])
    out = []
    for k in range(len(y)):
        e = np.zeros(len(y))
        e[k] = h
        out.append(sum(wi * f(y + oi * e) for wi, oi in zip(w, o)) / h)
    return np.array(out)


@dataclass
class StaticProfileChart(ChartMetric):
    """Analytic boundary normal chart of a ``static_profile`` preset on the face ``x1 = 0``.

    The normal coordinate satisfies ``dx1/dxn = c(x1)``; ``y = (t)`` in 1+1 and
    ``y = (t, x2)`` in 1+2.
    """

    metric: ProductMetric
    depth: float = 0.3

    def __post_init__(self):
        if self.metric.name != "static_profile":
            raise ValueError("StaticProfileChart needs a static_profile metric")
        self.m = self.metric.n
        self.a = self.metric.params["alpha"]
        self.cfun = static_profile_speed(self.metric)
        sol = solve_ivp(lambda s, x: [self.cfun(x[0])[0]], (0.0, self.depth), [0.0], method="DOP853",
                        rtol=1e-13, atol=1e-15, dense_output=True)
        self._x1 = sol.sol

    def x1(self, xn: float) -> float:
        if xn == 0:
            return 0.0
        if not 0 <= xn <= self.depth + 1e-12:
            raise ValueError(f"depth {xn} outside chart range [0, {self.depth}]")
        return float(self._x1(xn)[0])

    def _alpha(self, y, x1):
        a = self.a
        x2 = y[1] if self.m >= 2 else 0.0
        A = a[0] + a[1] * x1 + a[2] * x1**2 + a[3] * x2
        return A, a[1] + 2 * a[2] * x1, a[3]

    def Gi(self, y, xn):
        y = np.asarray(y, float)
        x1 = self.x1(xn)
        A = self._alpha(y, x1)[0]
        c = self.cfun(x1)[0]
        return np.diag([-1.0 / A] + [c * c] * (self.m - 1))

    def dGi_y(self, y, xn):
        y = np.asarray(y, float)
        out = np.zeros((self.m, self.m, self.m))
        if self.m >= 2:
            A, _, A2 = self._alpha(y, self.x1(xn))
            out[1, 0, 0] = A2 / A**2
        return out

    def d2Gi_y(self, y, xn):
        y = np.asarray(y, float)
        out = np.zeros((self.m,) * 4)
        if self.m >= 2:
            A, _, A2 = self._alpha(y, self.x1(xn))
            out[1, 1, 0, 0] = -2 * A2**2 / A**3
        return out

    def dGi_n(self, y, xn):
        y = np.asarray(y, float)
        x1 = self.x1(xn)
        A, A1, _ = self._alpha(y, x1)
        c, c1, _ = self.cfun(x1)
        out = np.zeros((self.m, self.m))
        out[0, 0] = A1 / A**2 * c
        for i in range(1, self.m):
            out[i, i] = 2 * c * c1 * c
        return out


@dataclass
class NumericalChart(ChartMetric):
    """Chart metric read from :class:`lorgeo.BoundaryNormalChart` by finite differences."""

    chart: object

    def __post_init__(self):
        self.m = self.chart.metric.n

    def Gi(self, y, xn):
        G = self.chart.metric_at(np.asarray(y, float), xn)
        return np.linalg.inv(G[: self.m, : self.m])


@dataclass
class FrozenChart(ChartMetric):
    """Reference chart ``Gi(y, xn) = base.Gi(y, 0)``: same boundary data, no normal variation."""

    base: ChartMetric

    def __post_init__(self):
        self.m = self.base.m

    def Gi(self, y, xn):
        return self.base.Gi(y, 0.0)

    def dGi_y(self, y, xn):
        return self.base.dGi_y(y, 0.0)

    def d2Gi_y(self, y, xn):
        return self.base.d2Gi_y(y, 0.0)

    def dGi_n(self, y, xn):
        return np.zeros((self.m, self.m))


# ---------------------------------------------------------------------------
# covectors
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryCovector:
    y: tuple
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in np.atleast_1d(self.y)))
        object.__setattr__(self, "xi", tuple(float(v) for v in np.atleast_1d(self.xi)))
        if len(self.y) != len(self.xi):
            raise ValueError("y and xi must have the same length")


def xi_normal(chart: ChartMetric, bc: BoundaryCovector) -> float:
    """Outgoing normal component ``xi_n = -sqrt(-Gi(xi, xi))`` at ``x_n = 0``."""
    xi = np.asarray(bc.xi)
    G = chart.Gi(np.asarray(bc.y), 0.0)
    S = -xi @ G @ xi
    if S <= 0:
        raise CausalityError(f"covector {bc.xi} is not timelike for the boundary metric (-Gi(xi,xi) = {S:.3e})")
    if xi[0] >= 0:
        raise PreconditionError("covector must be future pointing (xi_0 < 0)")
    return -math.sqrt(S)


# ---------------------------------------------------------------------------
# phase march
# ---------------------------------------------------------------------------
def _F_and_derivs(chart: ChartMetric, p, P, xn):
    """``F = d_n phi`` at ``y = 0`` with its tangential gradient and Hessian."""
    y0 = np.zeros(len(p))
    G = chart.Gi(y0, xn)
    Gk = chart.dGi_y(y0, xn)
    Gkl = chart.d2Gi_y(y0, xn)
    S = -p @ G @ p
    if S <= 0:
        raise CausalityError(f"eikonal lost its real root at depth {xn:.4g}")
    F = -math.sqrt(S)
    dS = -(2 * P @ G @ p + np.einsum("a,kab,b->k", p, Gk, p))
    PGP = P @ G @ P
    PGkp = np.einsum("ka,lab,b->kl", P, Gk, p)
    d2S = -(2 * PGP + 2 * PGkp + 2 * PGkp.T + np.einsum("a,klab,b->kl", p, Gkl, p))
    dF = dS / (2 * F)
    d2F = d2S / (2 * F) - np.outer(dS, dS) / (4 * F**3)
    return F, dF, d2F


@dataclass
class GOJet:
    """Phase and amplitude jets at a boundary point, marched along the normal ray."""

    bc: BoundaryCovector
    xn: np.ndarray
    phi0: np.ndarray
    p: np.ndarray
    P: np.ndarray
    dn_phi: np.ndarray
    dn2_phi: np.ndarray
    xi_n: float
    box_phi0: float = float("nan")
    dn_a0: complex = float("nan")
    dn2_a0: complex = float("nan")
    box_a0: complex = float("nan")
    dn_a1: complex = float("nan")
    chi: complex = 1.0
    extra: dict = field(default_factory=dict)

    def eikonal_residual(self, chart: ChartMetric) -> float:
        """``max |Gi(p, p) + (d_n phi)^2|`` along the march, in the chart centred at ``bc.y``."""
        sh = _Shifted(chart, self.bc.y)
        r = [abs(p @ sh.Gi(np.zeros(len(p)), x) @ p + d * d) for x, p, d in zip(self.xn, self.p, self.dn_phi)]
        return float(max(r))


def eikonal_jet_march(chart: ChartMetric, bc: BoundaryCovector, depth: float = 0.05, n_out: int = 41,
                      rtol: float = 1e-12, atol: float = 1e-14) -> GOJet:
    """March ``(phi0, p, P)`` in ``x_n`` from ``phi|_{x_n=0} = y.xi``.

    The base point ``bc.y`` is shifted to ``y = 0`` by evaluating the chart at
    ``bc.y + y``.
    """
    y0 = np.asarray(bc.y)
    sh = _Shifted(chart, y0)
    xi_n = xi_normal(chart, bc)
    m = chart.m
    xi = np.asarray(bc.xi)

    def rhs(x, s):
        p = s[1:1 + m]
        P = s[1 + m:].reshape(m, m)
        F, dF, d2F = _F_and_derivs(sh, p, P, x)
        return np.concatenate(([F], dF, d2F.ravel()))

    s0 = np.concatenate(([xi @ y0], xi, np.zeros(m * m)))
    xs = np.linspace(0.0, depth, n_out)
    sol = solve_ivp(rhs, (0.0, depth), s0, method="DOP853", t_eval=xs, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise CausalityError(f"eikonal march failed: {sol.message}")
    S = sol.y.T
    p = S[:, 1:1 + m]
    P = S[:, 1 + m:].reshape(-1, m, m)
    dn = np.empty(n_out)
    dn2 = np.empty(n_out)
    for k, x in enumerate(xs):
        F, dF, _ = _F_and_derivs(sh, p[k], P[k], x)
        dn[k] = F
        dn2[k] = _dn2_phi(sh, p[k], P[k], x, F, dF)
    jet = GOJet(bc, xs, S[:, 0], p, P, dn, dn2, xi_n)
    jet.box_phi0 = box_phi(sh, jet, 0)
    return jet


def _dn2_phi(chart, p, P, xn, F, dF):
    """Total ``d_n`` of ``F(y=0, xn)`` along the march: explicit part plus ``F_w . p'``."""
    y0 = np.zeros(len(p))
    G = chart.Gi(y0, xn)
    Gn = chart.dGi_n(y0, xn)
    Fn = -(p @ Gn @ p) / (2 * F)
    Fw = -(G @ p) / F
    return Fn + Fw @ dF


class _Shifted(ChartMetric):
    def __init__(self, base: ChartMetric, y0):
        self.base = base
        self.y0 = np.asarray(y0, float)
        self.m = base.m

    def Gi(self, y, xn):
        return self.base.Gi(self.y0 + y, xn)

    def dGi_y(self, y, xn):
        return self.base.dGi_y(self.y0 + y, xn)

    def d2Gi_y(self, y, xn):
        return self.base.d2Gi_y(self.y0 + y, xn)

    def dGi_n(self, y, xn):
        return self.base.dGi_n(self.y0 + y, xn)


def box_phi(chart: ChartMetric, jet: GOJet, k: int) -> float:
    """``box_g phi`` at ``(y=0, xn_k)`` from the marched jets (chart already shifted)."""
    x = jet.xn[k]
    p, P = jet.p[k], jet.P[k]
    y0 = np.zeros(len(p))
    G = chart.Gi(y0, x)
    Gk = chart.dGi_y(y0, x)
    tang = np.einsum("aab,b->", Gk, p) + np.sum(G * P) + 0.5 * chart.dlogdet_y(y0, x) @ G @ p
    return float(tang + jet.dn2_phi[k] + 0.5 * chart.dlogdet_n(y0, x) * jet.dn_phi[k])


def eikonal_boundary_identity(chart: ChartMetric, jet: GOJet) -> float:
    """Residual of the normal derivative of the eikonal equation at ``x_n = 0``.

    There ``P = 0`` and ``p = xi``, so differentiating in ``x_n`` gives
    ``2 xi_n d_n^2 phi + d_n Gi(xi, xi) + 2 Gi(xi, p') = 0`` with
    ``p' = grad_y d_n phi``.
    """
    y0 = np.asarray(jet.bc.y)
    xi = np.asarray(jet.bc.xi)
    G = chart.Gi(y0, 0.0)
    Gn = chart.dGi_n(y0, 0.0)
    _, dF, _ = _F_and_derivs(_Shifted(chart, y0), xi, np.zeros((len(xi), len(xi))), 0.0)
    return float(2 * jet.xi_n * jet.dn2_phi[0] + xi @ Gn @ xi + 2 * xi @ G @ dF)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------
def transport_jet_march(chart: ChartMetric, jet: GOJet, chi: complex = 1.0, h_y: float = 1e-3,
                        n_fd: int = 5) -> GOJet:
    """Normal derivatives of ``a0`` and ``a1`` at ``x_n = 0`` where ``a0|_{x_n=0} = chi`` is constant.

    ``d_n a0 = -box phi a0 / (2 xi_n)``.  ``d_n^2 a0`` comes from marching
    ``A(xn) = a0(0, xn)`` with the tangential gradient of ``a0`` linearized in
    ``xn`` and differentiating the resulting ``A'`` one-sidedly.  Then
    ``d_n a1 = i box a0 / (2 xi_n)``.
    """
    if jet.P.shape[-1] < 1 or len(jet.xn) < n_fd:
        raise PreconditionError("phase jet lacks the tangential order-2 data needed for transport")
    y0 = np.asarray(jet.bc.y)
    sh = _Shifted(chart, y0)
    m = chart.m
    xi_n = jet.xi_n
    dn_a0 = -jet.box_phi0 * chi / (2 * xi_n)

    # tangential gradient of d_n a0 on the boundary, from neighbouring base points
    depth = jet.xn[-1]
    w = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
    o = np.array([-2.0, -1.0, 1.0, 2.0])
    b1 = np.zeros(m, dtype=complex)
    for k in range(m):
        acc = 0.0
        for wi, oi in zip(w, o):
            yk = y0.copy()
            yk[k] += oi * h_y
            jk = eikonal_jet_march(chart, BoundaryCovector(yk, jet.bc.xi), depth=min(depth, 4 * h_y), n_out=3)
            # a0 = chi on the boundary; d_n a0 there with the phase of the shifted base
            acc = acc + wi * (-jk.box_phi0 * chi / (2 * jk.xi_n))
        b1[k] = acc / h_y
    # A'(xn) at small depths, A(xn) ~ chi + dn_a0 xn
    hs = jet.xn[1] - jet.xn[0]
    Ap = np.empty(n_fd, dtype=complex)
    for k in range(n_fd):
        x = jet.xn[k]
        A = chi + dn_a0 * x
        G = sh.Gi(np.zeros(m), x)
        bp = jet.p[k] @ G @ (b1 * x)
        Ap[k] = -(2 * bp + box_phi(sh, jet, k) * A) / (2 * jet.dn_phi[k])
    fd = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
    dn2_a0 = complex(fd @ Ap[:5] / hs)
    box_a0 = dn2_a0 + 0.5 * sh.dlogdet_n(np.zeros(m), 0.0) * dn_a0
    jet.dn_a0 = complex(dn_a0)
    jet.dn2_a0 = dn2_a0
    jet.box_a0 = box_a0
    jet.dn_a1 = 1j * box_a0 / (2 * xi_n)
    jet.chi = chi
    return jet


def transport_boundary_identity(chart: ChartMetric, jet: GOJet) -> float:
    """Residual of ``2 d_n phi d_n a0 + (1/2) d_n log|det g| d_n phi + d_n^2 phi + Q = 0``
    at ``x_n = 0`` (``a0 = 1``), with ``Q`` the tangential part of ``box phi``."""
    sh = _Shifted(chart, jet.bc.y)
    m = chart.m
    y0 = np.zeros(m)
    G = sh.Gi(y0, 0.0)
    p = jet.p[0]
    Q = np.einsum("aab,b->", sh.dGi_y(y0, 0.0), p) + np.sum(G * jet.P[0]) + 0.5 * sh.dlogdet_y(y0, 0.0) @ G @ p
    r = (2 * jet.dn_phi[0] * jet.dn_a0 / jet.chi + 0.5 * sh.dlogdet_n(y0, 0.0) * jet.dn_phi[0]
         + jet.dn2_phi[0] + Q)
    return float(abs(r))


def go_boundary_data(chart: ChartMetric, bc: BoundaryCovector, depth: float = 0.05, chi: complex = 1.0) -> GOJet:
    """Forward oracle: full phase and amplitude march for one covector."""
    jet = eikonal_jet_march(chart, bc, depth=depth)
    return transport_jet_march(chart, jet, chi=chi)


def go_neumann(jet: GOJet, lam: float, order: int = 1) -> complex:
    """``d_nu`` of ``exp(i lam phi)(a0 + a1/lam)`` at the base point, with ``d_nu = -d_n``."""
    dn = 1j * lam * jet.xi_n * jet.chi + jet.dn_a0
    if order >= 1:
        dn = dn + jet.dn_a1 / lam
    return -dn


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------
def _sym_basis(m: int):
    return [(a, b) for a in range(m) for b in range(a, m)]


def _design(xis: np.ndarray) -> np.ndarray:
    m = xis.shape[1]
    cols = []
    for a, b in _sym_basis(m):
        cols.append(xis[:, a] * xis[:, b] * (1.0 if a == b else 2.0))
    return np.column_stack(cols)


@dataclass
class FitResult:
    value: np.ndarray
    residual: float
    condition_number: float


def _lstsq_sym(xis, rhs, m) -> FitResult:
    A = _design(np.asarray(xis, float))
    need = m * (m + 1) // 2
    if A.shape[0] < need:
        raise ConditioningError(f"need at least {need} covectors, got {A.shape[0]}")
    sv = np.linalg.svd(A, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if sv[-1] <= 1e-12 * sv[0]:
        raise ConditioningError(f"rank-deficient covector design (condition number {cond:.3g})")
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    M = np.zeros((m, m))
    for c, (a, b) in zip(x, _sym_basis(m)):
        M[a, b] = M[b, a] = c
    return FitResult(M, float(np.linalg.norm(A @ x - rhs)), cond)


def recover_boundary_metric(samples) -> FitResult:
    """Least-squares ``Gi`` from pairs ``(xi, xi_n)`` via ``xi_n^2 = -Gi(xi, xi)``."""
    xis = np.array([np.asarray(s[0].xi if isinstance(s[0], BoundaryCovector) else s[0], float) for s in samples])
    xin = np.array([s[1] for s in samples], float)
    return _lstsq_sym(xis, -(xin**2), xis.shape[1])


def recover_normal_jet(samples, G_boundary: np.ndarray, reference: list) -> dict:
    """``d_n Gi`` at the boundary from per-covector normal data.

    ``samples`` and ``reference`` are lists of :class:`GOJet` for the same
    covectors, from the unknown metric and from the frozen reference built on
    the recovered boundary metric.  Only differences enter, so the tangential
    remainder terms of the identities cancel.
    """
    G = np.asarray(G_boundary, float)
    m = G.shape[0]
    xis = np.array([j.bc.xi for j in samples], float)
    if m == 1:
        rhs = np.array([-2 * s.xi_n * (s.dn2_phi[0] - r.dn2_phi[0]) for s, r in zip(samples, reference)])
        fit = _lstsq_sym(xis, rhs, m)
        dG = fit.value
        H = dG + 0.0
        dlogdet = -float(np.trace(np.linalg.solve(G, dG)))
    else:
        rhs = np.array([(4 * s.xi_n**2 * (s.dn_a0 / s.chi - r.dn_a0 / r.chi)).real for s, r in zip(samples, reference)])
        fit = _lstsq_sym(xis, rhs, m)
        H = fit.value
        d = 1.0 / np.linalg.det(G)
        h = d * G
        dh = d * H
        dG = (dh - np.trace(np.linalg.solve(h, dh)) * h / (m - 1)) / d
        dlogdet = -float(np.trace(np.linalg.solve(G, dG)))
    return {"dGi": dG, "H": H, "dn_logdet": dlogdet, "residual": fit.residual, "condition_number": fit.condition_number}


def covector_fan(m: int, count: int = 10, speed: float = 1.0, spread: float = 0.5, seed: int = 0) -> list[np.ndarray]:
    """Future-pointing covectors ``(-1, eta)`` with ``|eta| < spread / speed`` in general position."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        if m == 1:
            out.append(np.array([-1.0 - 0.1 * k]))
            continue
        eta = rng.uniform(-1, 1, m - 1)
        eta *= spread / speed * rng.uniform(0.2, 1.0) / max(np.linalg.norm(eta), 1e-12)
        out.append(np.concatenate(([-1.0], eta)) * (1.0 + 0.1 * k))
    return out


def recovery_round_trip(chart: ChartMetric, y0, fan: list, depth: float = 0.05) -> dict:
    """Forward data from ``chart`` for the fan, then recover ``Gi`` and ``d_n Gi`` at ``y0``."""
    bcs = [BoundaryCovector(y0, xi) for xi in fan]
    data = [go_boundary_data(chart, bc, depth) for bc in bcs]
    g_fit = recover_boundary_metric([(bc, j.xi_n) for bc, j in zip(bcs, data)])
    ref_chart = FrozenChart(_FittedBoundary(chart, y0, g_fit.value))
    ref = [go_boundary_data(ref_chart, bc, depth) for bc in bcs]
    nj = recover_normal_jet(data, g_fit.value, ref)
    return {"G": g_fit, "normal": nj, "data": data, "reference": ref}


class _FittedBoundary(ChartMetric):
    """Boundary metric known from boundary measurements: tangential structure of ``chart`` at ``x_n = 0``,
    with the value at the base point replaced by the recovered one."""

    def __init__(self, chart: ChartMetric, y0, G0):
        self.chart = chart
        self.m = chart.m
        self.y0 = np.asarray(y0, float)
        self.offset = np.asarray(G0) - chart.Gi(self.y0, 0.0)

    def Gi(self, y, xn):
        return self.chart.Gi(y, 0.0) + self.offset

    def dGi_y(self, y, xn):
        return self.chart.dGi_y(y, 0.0)

    def d2Gi_y(self, y, xn):
        return self.chart.d2Gi_y(y, 0.0)

    def dGi_n(self, y, xn):
        return np.zeros((self.m, self.m))
