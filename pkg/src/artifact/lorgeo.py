"""Lorentzian product metrics, null geodesics with boundary events, and charts.

Coordinates are ``X = (t, x_1, ..., x_n)``.  Metric evaluators are vectorized:
``metric.g(X)`` accepts any array whose last axis has length ``1 + n`` and
returns the matrices stacked on the leading axes.  Derivative arrays use the
layout ``dg[..., k, i, j] = d_k g_ij`` and ``d2g[..., k, l, i, j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp


class GeometryError(Exception):
    """Base class for geometric failures."""


class DomainError(GeometryError, ValueError):
    """Point outside the extended domain."""


class PreconditionError(GeometryError, ValueError):
    """Input violates a documented precondition."""


class TangencyError(GeometryError):
    """Contact with the boundary is (numerically) tangential."""


class ChartError(GeometryError):
    """Chart construction failed; ``max_depth`` estimates the admissible depth."""

    def __init__(self, msg: str, max_depth: float | None = None):
        super().__init__(msg)
        self.max_depth = max_depth


class DegeneracyError(GeometryError, ValueError):
    """Degenerate direction configuration."""


TOL_TANGENT = 1e-8


# ---------------------------------------------------------------------------
# points and domains
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SpacetimePoint:
    t: float
    x: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        object.__setattr__(self, "x", x)
        if not (np.isfinite(self.t) and np.all(np.isfinite(x))):
            raise ValueError("non-finite coordinates")

    @property
    def array(self) -> np.ndarray:
        return np.array((self.t,) + self.x)

    @classmethod
    def of(cls, X) -> "SpacetimePoint":
        X = np.asarray(X, dtype=float)
        return cls(float(X[0]), tuple(X[1:]))


def as_coords(p) -> np.ndarray:
    if isinstance(p, SpacetimePoint):
        return p.array
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class Domain:
    """Spatial domain: ``interval``, ``box`` or ``ball``.

    Each face carries a level function that is positive inside, zero on the
    face and has unit Euclidean gradient on it.
    """

    kind: str
    lo: tuple = ()
    hi: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    @staticmethod
    def interval(lo: float, hi: float) -> "Domain":
        return Domain("interval", lo=(float(lo),), hi=(float(hi),))

    @staticmethod
    def box(lo: Sequence[float], hi: Sequence[float]) -> "Domain":
        return Domain("box", lo=tuple(map(float, lo)), hi=tuple(map(float, hi)))

    @staticmethod
    def ball(center: Sequence[float], radius: float) -> "Domain":
        return Domain("ball", center=tuple(map(float, center)), radius=float(radius))

    @property
    def dim(self) -> int:
        return len(self.center) if self.kind == "ball" else len(self.lo)

    @property
    def nfaces(self) -> int:
        return 1 if self.kind == "ball" else 2 * len(self.lo)

    def face_names(self) -> list[str]:
        if self.kind == "ball":
            return ["sphere"]
        names = []
        for i in range(len(self.lo)):
            names += [f"x{i + 1}_lo", f"x{i + 1}_hi"]
        return names

    def levels(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            c = np.asarray(self.center)
            r2 = np.sum((x - c) ** 2, axis=-1)
            return ((self.radius**2 - r2) / (2 * self.radius))[..., None]
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        out = np.empty(x.shape[:-1] + (2 * len(lo),))
        out[..., 0::2] = x - lo
        out[..., 1::2] = hi - x
        return out

    def level_grads(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            c = np.asarray(self.center)
            return (-(x - c) / self.radius)[..., None, :]
        n = len(self.lo)
        G = np.zeros(x.shape[:-1] + (2 * n, n))
        for i in range(n):
            G[..., 2 * i, i] = 1.0
            G[..., 2 * i + 1, i] = -1.0
        return G

    def inside_value(self, x) -> np.ndarray:
        return np.min(self.levels(x), axis=-1)

    def contains(self, x, tol: float = 1e-12) -> bool:
        return bool(np.all(self.inside_value(x) >= -tol))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "ball":
            c = np.asarray(self.center)
            return c - self.radius, c + self.radius
        return np.asarray(self.lo), np.asarray(self.hi)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------
def _fd_weights():
    return np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, np.array([-2.0, -1.0, 1.0, 2.0])


@dataclass(frozen=True)
class Metric:
    """Base class for a Lorentzian metric on ``(0, T) x N1`` with inner domain ``N``."""

    n: int
    N: Domain
    N1: Domain
    T: float = 2.0
    h_fd: float = 1e-3
    name: str = "metric"
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.n + 1

    def g(self, X) -> np.ndarray:
        raise NotImplementedError

    def dg(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        w, off = _fd_weights()
        h = self.h_fd
        out = np.zeros(X.shape[:-1] + (self.dim, self.dim, self.dim))
        for k in range(self.dim):
            E = np.zeros(self.dim)
            E[k] = h
            acc = 0.0
            for wi, oi in zip(w, off):
                acc = acc + wi * self.g(X + oi * E)
            out[..., k, :, :] = acc / h
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def d2g(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        w, off = _fd_weights()
        h = self.h_fd
        out = np.zeros(X.shape[:-1] + (self.dim,) * 4)
        for l in range(self.dim):
            E = np.zeros(self.dim)
            E[l] = h
            acc = 0.0
            for wi, oi in zip(w, off):
                acc = acc + wi * self.dg(X + oi * E)
            out[..., :, l, :, :] = acc / h
        out = 0.5 * (out + np.swapaxes(out, -3, -4))
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def g_inv(self, X) -> np.ndarray:
        return np.linalg.inv(self.g(X))

    def check_domain(self, X, tol: float = 1e-9) -> None:
        X = np.asarray(X, dtype=float)
        if not self.N1.contains(X[..., 1:], tol=tol):
            raise DomainError(f"point {X} outside the extended domain")

    def char_speed(self, X) -> np.ndarray:
        """Largest coordinate speed ``|dx/dt|`` of null directions at ``X``."""
        g = self.g(X)
        gi = np.linalg.inv(g)
        # null covector speeds: for diagonal-dominant metrics use sqrt(g^{ii}/-g^{00}) bound
        g00 = -gi[..., 0, 0]
        spat = gi[..., 1:, 1:]
        lam = np.linalg.eigvalsh(spat)[..., -1]
        cross = np.linalg.norm(gi[..., 0, 1:], axis=-1)
        return (cross + np.sqrt(cross**2 + g00 * lam)) / g00


@dataclass(frozen=True)
class ProductMetric(Metric):
    """``g = -alpha dt^2 + kappa`` with scalar lapse and spatial metric.

    ``scalar_jets`` (optional) returns ``(A, dA, d2A, S, dS, d2S)`` for metrics
    of the form ``-A dt^2 + S * euclid``; all presets use it for analytic
    derivatives.  Otherwise ``alpha`` and ``kappa`` callables are used with the
    finite-difference fallback.
    """

    alpha: Callable | None = None
    kappa: Callable | None = None
    scalar_jets: Callable | None = None

    def _jets(self, X):
        return self.scalar_jets(np.asarray(X, dtype=float))

    def g(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1] + (self.dim, self.dim))
        if self.scalar_jets is not None:
            A, _, _, S, _, _ = self._jets(X)
            out[..., 0, 0] = -A
            for i in range(1, self.dim):
                out[..., i, i] = S
            return out
        out[..., 0, 0] = -self.alpha(X)
        out[..., 1:, 1:] = self.kappa(X)
        return out

    def dg(self, X) -> np.ndarray:
        if self.scalar_jets is None:
            return super().dg(X)
        X = np.asarray(X, dtype=float)
        _, dA, _, _, dS, _ = self._jets(X)
        out = np.zeros(X.shape[:-1] + (self.dim,) * 3)
        out[..., :, 0, 0] = -dA
        for i in range(1, self.dim):
            out[..., :, i, i] = dS
        return out

    def d2g(self, X) -> np.ndarray:
        if self.scalar_jets is None:
            return super().d2g(X)
        X = np.asarray(X, dtype=float)
        _, _, d2A, _, _, d2S = self._jets(X)
        out = np.zeros(X.shape[:-1] + (self.dim,) * 4)
        out[..., :, :, 0, 0] = -d2A
        for i in range(1, self.dim):
            out[..., :, :, i, i] = d2S
        return out

    def lapse(self, X) -> np.ndarray:
        return -self.g(X)[..., 0, 0]


@dataclass(frozen=True)
class ScaledMetric(Metric):
    """``exp(2 sigma) * base`` for a scalar field ``sigma`` with jets.

    ``sigma_jets(X)`` returns ``(s, ds, d2s)``.
    """

    base: Metric | None = None
    sigma_jets: Callable | None = None

    def g(self, X):
        s, _, _ = self.sigma_jets(np.asarray(X, dtype=float))
        return np.exp(2 * s)[..., None, None] * self.base.g(X)

    def dg(self, X):
        X = np.asarray(X, dtype=float)
        s, ds, _ = self.sigma_jets(X)
        e = np.exp(2 * s)[..., None, None, None]
        g0 = self.base.g(X)
        return e * (self.base.dg(X) + 2 * ds[..., :, None, None] * g0[..., None, :, :])

    def d2g(self, X):
        X = np.asarray(X, dtype=float)
        s, ds, d2s = self.sigma_jets(X)
        e = np.exp(2 * s)[..., None, None, None, None]
        g0, dg0, d2g0 = self.base.g(X), self.base.dg(X), self.base.d2g(X)
        term = (4 * ds[..., :, None] * ds[..., None, :] + 2 * d2s)[..., None, None] * g0[..., None, None, :, :]
        term = term + 2 * ds[..., :, None, None, None] * dg0[..., None, :, :, :]
        term = term + 2 * ds[..., None, :, None, None] * dg0[..., :, None, :, :]
        return e * (d2g0 + term)


@dataclass(frozen=True)
class PullbackMetric(Metric):
    """Pullback ``psi^* base`` by a spacetime map with Jacobian ``dpsi``."""

    base: Metric | None = None
    psi: Callable | None = None
    dpsi: Callable | None = None

    def g(self, X):
        X = np.asarray(X, dtype=float)
        J = self.dpsi(X)
        G = self.base.g(self.psi(X))
        return np.einsum("...ai,...ab,...bj->...ij", J, G, J)


# --- preset scalar fields ----------------------------------------------------
def bump_jets(X, amp: float, center, width: float):
    """``amp * exp(1 - 1/(1 - s))`` with ``s = |X - c|^2 / width^2``, zero for ``s >= 1``."""
    X = np.asarray(X, dtype=float)
    d = X - np.asarray(center, dtype=float)
    s = np.sum(d * d, axis=-1) / width**2
    inside = s < 1.0
    sc = np.where(inside, s, 0.0)
    one = 1.0 - sc
    b = np.where(inside, amp * np.exp(1.0 - 1.0 / one), 0.0)
    b1 = np.where(inside, -b / one**2, 0.0)
    b2 = np.where(inside, b * (2 * sc - 1) / one**4, 0.0)
    ds = 2 * d / width**2
    dim = X.shape[-1]
    val = b
    grad = b1[..., None] * ds
    hess = b2[..., None, None] * ds[..., :, None] * ds[..., None, :] + b1[..., None, None] * (2 / width**2) * np.eye(dim)
    return val, grad, hess


def _const_jets(X, c):
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    return np.full(X.shape[:-1], float(c)), np.zeros(X.shape), np.zeros(X.shape + (d,))


def minkowski(n: int = 1, N: Domain | None = None, N1: Domain | None = None, T: float = 2.0) -> ProductMetric:
    N, N1 = _default_domains(n, N, N1)

    def jets(X):
        A, dA, d2A = _const_jets(X, 1.0)
        return A, dA, d2A, A, dA, d2A

    return ProductMetric(n=n, N=N, N1=N1, T=T, name="minkowski", params={"n": n}, scalar_jets=jets)


def conformal_bump(n: int = 1, amp: float = 0.1, center=None, width: float = 0.3, N=None, N1=None, T: float = 2.0) -> ProductMetric:
    """``exp(2 beta) * eta`` with ``beta`` a compactly supported spacetime bump."""
    N, N1 = _default_domains(n, N, N1)
    if center is None:
        center = [T / 4] + [0.5] * n if n == 1 else [T / 4] + [0.0] * n
    center = [float(c) for c in center]

    def jets(X):
        b, db, d2b = bump_jets(X, amp, center, width)
        e = np.exp(2 * b)
        de = 2 * db * e[..., None]
        d2e = (4 * db[..., :, None] * db[..., None, :] + 2 * d2b) * e[..., None, None]
        return e, de, d2e, e, de, d2e

    return ProductMetric(n=n, N=N, N1=N1, T=T, name="conformal_bump",
                         params={"n": n, "amp": amp, "center": center, "width": width}, scalar_jets=jets)


def conformal_beta(metric: ProductMetric):
    """The ``beta`` jets of a ``conformal_bump`` preset."""
    p = metric.params
    return lambda X: bump_jets(X, p["amp"], p["center"], p["width"])


def static_profile(n: int = 1, alpha=(1.0, 0.0, 0.0, 0.0), c=(1.0, 0.0, 0.0), N=None, N1=None, T: float = 2.0) -> ProductMetric:
    """``alpha = a0 + a1 x1 + a2 x1^2 + a3 x2`` and ``kappa = c(x1)^-2 * euclid``."""
    if n not in (1, 2):
        raise ValueError("static_profile supports n in {1, 2}")
    N, N1 = _default_domains(n, N, N1, box=True)
    a = [float(v) for v in alpha] + [0.0] * (4 - len(alpha))
    cc = [float(v) for v in c] + [0.0] * (3 - len(c))

    def jets(X):
        X = np.asarray(X, dtype=float)
        d = X.shape[-1]
        x1 = X[..., 1]
        x2 = X[..., 2] if n >= 2 else 0.0
        A = a[0] + a[1] * x1 + a[2] * x1**2 + a[3] * x2
        dA = np.zeros(X.shape)
        dA[..., 1] = a[1] + 2 * a[2] * x1
        if n >= 2:
            dA[..., 2] = a[3]
        d2A = np.zeros(X.shape + (d,))
        d2A[..., 1, 1] = 2 * a[2]
        cv = cc[0] + cc[1] * x1 + cc[2] * x1**2
        c1 = cc[1] + 2 * cc[2] * x1
        c2 = 2 * cc[2]
        S = cv**-2
        dS = np.zeros(X.shape)
        dS[..., 1] = -2 * cv**-3 * c1
        d2S = np.zeros(X.shape + (d,))
        d2S[..., 1, 1] = 6 * cv**-4 * c1**2 - 2 * cv**-3 * c2
        return A, dA, d2A, S, dS, d2S

    return ProductMetric(n=n, N=N, N1=N1, T=T, name="static_profile",
                         params={"n": n, "alpha": a, "c": cc}, scalar_jets=jets)


def static_profile_speed(metric: ProductMetric):
    """``c(x1)`` and its first two derivatives for a ``static_profile`` preset."""
    cc = metric.params["c"]

    def c(x1):
        return cc[0] + cc[1] * x1 + cc[2] * x1**2, cc[1] + 2 * cc[2] * x1, 2 * cc[2] + 0 * x1

    return c


def lens(amp: float = 4.0, width: float = 1.0, N=None, N1=None, T: float = 20.0) -> ProductMetric:
    """1+2 optical lens: ``alpha = 1``, ``kappa = m(r)^2 euclid``, ``m = 1 + amp exp(-r^2/width^2)``."""
    N = N or Domain.ball((0.0, 0.0), 1.0)
    N1 = N1 or Domain.ball((0.0, 0.0), 2.0)

    def jets(X):
        X = np.asarray(X, dtype=float)
        d = X.shape[-1]
        y = X[..., 1:]
        r2 = np.sum(y * y, axis=-1)
        e = amp * np.exp(-r2 / width**2)
        m = 1.0 + e
        dm = np.zeros(X.shape)
        dm[..., 1:] = -2 * y / width**2 * e[..., None]
        d2m = np.zeros(X.shape + (d,))
        d2m[..., 1:, 1:] = e[..., None, None] * (4 * y[..., :, None] * y[..., None, :] / width**4 - 2 * np.eye(2) / width**2)
        S = m * m
        dS = 2 * m[..., None] * dm
        d2S = 2 * dm[..., :, None] * dm[..., None, :] + 2 * m[..., None, None] * d2m
        A, dA, d2A = _const_jets(X, 1.0)
        return A, dA, d2A, S, dS, d2S

    return ProductMetric(n=2, N=N, N1=N1, T=T, name="lens", params={"amp": amp, "width": width}, scalar_jets=jets)


def _default_domains(n, N, N1, box=False):
    if N is not None and N1 is not None:
        return N, N1
    if n == 1:
        return N or Domain.interval(0.0, 1.0), N1 or Domain.interval(-0.2, 1.2)
    if n == 2 and box:
        return N or Domain.box((0.0, 0.0), (1.0, 1.0)), N1 or Domain.box((-0.2, -0.2), (1.2, 1.2))
    zero = (0.0,) * n
    return N or Domain.ball(zero, 1.0), N1 or Domain.ball(zero, 1.5)


PRESETS: dict[str, Callable[..., ProductMetric]] = {
    "minkowski": minkowski,
    "conformal_bump": conformal_bump,
    "static_profile": static_profile,
    "lens": lens,
}


def make_metric(name: str, **params) -> ProductMetric:
    if name not in PRESETS:
        raise KeyError(f"unknown metric preset {name!r}; choose from {sorted(PRESETS)}")
    for key in ("N", "N1"):
        if isinstance(params.get(key), dict):
            params[key] = Domain(**{k: tuple(v) if isinstance(v, list) else v for k, v in params[key].items()})
    return PRESETS[name](**params)


# ---------------------------------------------------------------------------
# pointwise tensors
# ---------------------------------------------------------------------------
def metric_at(metric: Metric, p) -> np.ndarray:
    X = as_coords(p)
    metric.check_domain(X)
    return metric.g(X)


def inverse_metric_at(metric: Metric, p) -> np.ndarray:
    """Inverse metric ``g^{ij}`` at ``p``."""
    X = as_coords(p)
    metric.check_domain(X)
    gi = np.linalg.inv(metric.g(X))
    return 0.5 * (gi + gi.T)


def _christoffel(metric: Metric, X) -> np.ndarray:
    gi = np.linalg.inv(metric.g(X))
    dg = metric.dg(X)
    # lowered symbol [l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
    return np.einsum("...il,...ljk->...ijk", gi, low)


def christoffel_at(metric: Metric, p) -> np.ndarray:
    """Christoffel symbols ``Gamma[i, j, k]``, symmetric in ``j, k`` by construction."""
    X = as_coords(p)
    metric.check_domain(X)
    return _christoffel(metric, X)


def riemann_at(metric: Metric, p) -> np.ndarray:
    """Riemann tensor ``R_{abcd}`` (lowered), sign convention
    ``R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb}``."""
    X = as_coords(p)
    g = metric.g(X)
    gi = np.linalg.inv(g)
    dg = metric.dg(X)
    d2g = metric.d2g(X)
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)  # [l, j, k]
    Gam = gi @ low.reshape(len(X), -1)
    Gam = Gam.reshape((len(X),) * 3)
    # d_c low[l, j, k] = 1/2 (d_c d_j g_lk + d_c d_k g_lj - d_c d_l g_jk)
    dlow = 0.5 * (np.einsum("cjlk->cljk", d2g) + np.einsum("cklj->cljk", d2g) - np.einsum("cljk->cljk", d2g))
    dgi = -np.einsum("ap,cpq,qb->cab", gi, dg, gi)
    dGam = np.einsum("cal,ljk->cajk", dgi, low) + np.einsum("al,cljk->cajk", gi, dlow)  # d_c Gamma^a_jk
    R = (np.einsum("cadb->abcd", dGam) - np.einsum("dacb->abcd", dGam)
         + np.einsum("ace,edb->abcd", Gam, Gam) - np.einsum("ade,ecb->abcd", Gam, Gam))
    return np.einsum("ae,ebcd->abcd", g, R)


def causal_class(metric: Metric, p, v, tol_null: float = 1e-8) -> str:
    X = as_coords(p)
    v = np.asarray(v, dtype=float)
    q = v @ metric.g(X) @ v
    if abs(q) <= tol_null * max(1.0, v @ v):
        return "null"
    return "timelike" if q < 0 else "spacelike"


def null_vector(metric: Metric, X, spatial_dir, future: bool = True) -> np.ndarray:
    """Null vector ``(1, lam * u)`` (or its negative) with ``lam > 0``."""
    X = as_coords(X)
    g = metric.g(X)
    u = np.asarray(spatial_dir, dtype=float)
    a = u @ g[1:, 1:] @ u
    b = 2 * g[0, 1:] @ u
    c = g[0, 0]
    lam = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    v = np.concatenate(([1.0], lam * u))
    return v if future else -v


def raise_covector(metric: Metric, X, theta) -> np.ndarray:
    return np.linalg.solve(metric.g(as_coords(X)), np.asarray(theta, dtype=float))


def outward_normal(metric: Metric, domain: Domain, X, face: int | None = None) -> np.ndarray:
    """Unit outward normal ``nu`` of ``(0,T) x partial(domain)`` at ``X``."""
    X = as_coords(X)
    x = X[1:]
    if face is None:
        face = int(np.argmin(np.abs(domain.levels(x))))
    dl = domain.level_grads(x)[face]
    conormal = np.concatenate(([0.0], -dl))
    gi = np.linalg.inv(metric.g(X))
    nu = gi @ conormal
    return nu / math.sqrt(conormal @ nu)


def reflect_velocity(metric: Metric, b, v, face: int | None = None, domain: Domain | None = None) -> np.ndarray:
    """Mirror law ``v' = v - 2 g(v, nu) nu`` at a boundary point ``b``."""
    X = as_coords(b)
    domain = domain or metric.N
    nu = outward_normal(metric, domain, X, face)
    g = metric.g(X)
    v = np.asarray(v, dtype=float)
    gvn = v @ g @ nu
    if abs(gvn) < TOL_TANGENT:
        raise TangencyError(f"tangential velocity at boundary point {X}; g(v, nu) = {gvn:.3e}")
    return v - 2 * gvn * nu


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------
@dataclass
class GeodesicEvent:
    kind: str  # enter | exit | reflect | tangent | end_time | end_domain | end_parameter
    s: float
    point: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    face: int = -1
    g_v_nu: float = float("nan")


@dataclass
class GeodesicSegment:
    s: np.ndarray
    X: np.ndarray
    V: np.ndarray
    dense: Callable

    def state_at(self, s):
        return self.dense(s)


@dataclass
class BrokenNullGeodesic:
    segments: list
    events: list
    mode: str
    renormalizations: int = 0
    termination: str = ""

    @property
    def contacts(self) -> list:
        return [e for e in self.events if e.kind in ("enter", "exit", "reflect", "tangent")]

    def state_at(self, s: float) -> np.ndarray:
        for seg in self.segments:
            lo, hi = min(seg.s[0], seg.s[-1]), max(seg.s[0], seg.s[-1])
            if lo - 1e-14 <= s <= hi + 1e-14:
                return seg.dense(s)
        raise ValueError(f"parameter {s} outside integrated range")

    def position_at(self, s: float) -> np.ndarray:
        y = self.state_at(s)
        return y[: len(y) // 2]

    def velocity_at(self, s: float) -> np.ndarray:
        y = self.state_at(s)
        return y[len(y) // 2:]

    @property
    def end(self) -> np.ndarray:
        seg = self.segments[-1]
        return np.concatenate((seg.X[-1], seg.V[-1]))

    def samples(self) -> np.ndarray:
        """Rows ``(s, X, V, event_flag)`` in increasing ``s``."""
        rows = []
        ev_s = {round(e.s, 12) for e in self.contacts}
        for seg in self.segments:
            for s, X, V in zip(seg.s, seg.X, seg.V):
                rows.append(np.concatenate(([s], X, V, [1.0 if round(s, 12) in ev_s else 0.0])))
        return np.array(rows)

    def max_null_drift(self, metric: Metric) -> float:
        out = 0.0
        for seg in self.segments:
            G = metric.g(seg.X)
            q = np.einsum("mi,mij,mj->m", seg.V, G, seg.V)
            out = max(out, float(np.max(np.abs(q))))
        return out


def _geodesic_rhs(metric: Metric):
    d = metric.dim

    def rhs(s, y):
        X, V = y[:d], y[d:]
        Gam = _christoffel(metric, X)
        return np.concatenate((V, -np.einsum("ijk,j,k->i", Gam, V, V)))

    return rhs


def _renormalize_null(metric: Metric, X, V):
    g = metric.g(X)
    sp_ = V[1:]
    a, b, c = g[0, 0], 2 * g[0, 1:] @ sp_, sp_ @ g[1:, 1:] @ sp_
    disc = b * b - 4 * a * c
    roots = [(-b + s * math.sqrt(max(disc, 0.0))) / (2 * a) for s in (1, -1)]
    v0 = min(roots, key=lambda r: abs(r - V[0]))
    W = V.copy()
    W[0] = v0
    return W


def integrate_null_geodesic(metric: Metric, p0, v0, mode: str = "transmit", *, s_max: float = 50.0,
                            max_events: int = 8, rtol: float = 1e-10, atol: float = 1e-12,
                            tol_null: float = 1e-8, method: str = "DOP853", allow_past: bool = False,
                            t_min: float | None = None, chunk: float = 0.5, domain: Domain | None = None
                            ) -> BrokenNullGeodesic:
    """Integrate a null geodesic and record contacts with ``(0,T) x partial N``.

    ``transmit`` records crossings and stops on leaving ``N1`` or at ``t = T``;
    ``reflect`` applies the mirror law at each contact from inside.  With
    ``allow_past`` the initial velocity may be past-pointing (backward tracing);
    integration then also stops at ``t = t_min``.
    """
    if mode not in ("transmit", "reflect"):
        raise PreconditionError(f"unknown mode {mode!r}")
    X0 = as_coords(p0)
    V0 = np.asarray(v0, dtype=float)
    metric.check_domain(X0)
    dom = domain or metric.N
    d = metric.dim
    if causal_class(metric, X0, V0, tol_null) != "null":
        raise PreconditionError(f"initial velocity is not null: g(v,v) = {V0 @ metric.g(X0) @ V0:.3e}")
    if not allow_past and V0[0] <= 0:
        raise PreconditionError("initial velocity must be future-pointing")
    if t_min is None:
        t_min = -metric.T if allow_past else 0.0
    rhs = _geodesic_rhs(metric)

    def ev_face(s, y):
        return dom.inside_value(y[1:d])

    def ev_n1(s, y):
        return metric.N1.inside_value(y[1:d])

    ev_n1.terminal, ev_n1.direction = True, -1

    def ev_tmax(s, y):
        return y[0] - metric.T

    ev_tmax.terminal, ev_tmax.direction = True, 1

    def ev_tmin(s, y):
        return y[0] - t_min

    ev_tmin.terminal, ev_tmin.direction = True, -1

    if mode == "reflect":
        ev_face.terminal, ev_face.direction = True, -1
    else:
        ev_face.terminal, ev_face.direction = False, 0

    segments, events = [], []
    renorm = 0
    s = 0.0
    y = np.concatenate((X0, V0))
    termination = "end_parameter"
    n_reflect = 0
    cur = None  # current segment accumulators
    while s < s_max:
        s_end = min(s + chunk, s_max)
        sol = solve_ivp(rhs, (s, s_end), y, method=method, rtol=rtol, atol=atol, dense_output=True,
                        events=[ev_face, ev_n1, ev_tmax, ev_tmin])
        if sol.status == -1:
            raise GeometryError(f"integration failure at s={s}: {sol.message}")
        ts, Ys = sol.t, sol.y.T
        if cur is None:
            cur = {"s": [ts], "y": [Ys], "dense": [(ts[0], ts[-1], sol.sol)]}
        else:
            cur["s"].append(ts[1:])
            cur["y"].append(Ys[1:])
            cur["dense"].append((ts[0], ts[-1], sol.sol))
        # contact records from the face event
        for se, ye in zip(sol.t_events[0], sol.y_events[0]):
            if abs(se - s) < 1e-13 and events and abs(events[-1].s - se) < 1e-9:
                continue
            Xe, Ve = ye[:d], ye[d:]
            face = int(np.argmin(np.abs(dom.levels(Xe[1:]))))
            nu = outward_normal(metric, dom, Xe, face)
            gvn = float(Ve @ metric.g(Xe) @ nu)
            if abs(gvn) < TOL_TANGENT:
                kind = "tangent"
            else:
                kind = "exit" if gvn > 0 else "enter"
            v_out = Ve.copy()
            if mode == "reflect" and kind == "exit":
                kind = "reflect"
                v_out = reflect_velocity(metric, Xe, Ve, face=face, domain=dom)
            events.append(GeodesicEvent(kind, float(se), Xe.copy(), Ve.copy(), v_out, face, gvn))
        stop = None
        if sol.status == 1:
            if len(sol.t_events[1]):
                stop = "end_domain"
            elif len(sol.t_events[2]):
                stop = "end_time"
            elif len(sol.t_events[3]):
                stop = "end_time"
            elif mode == "reflect" and len(sol.t_events[0]):
                stop = "reflect"
        s = float(ts[-1])
        y = Ys[-1].copy()
        if stop == "reflect":
            segments.append(_close_segment(cur, d))
            cur = None
            n_reflect += 1
            y[d:] = events[-1].v_out
            if events[-1].kind == "tangent":
                termination = "tangent"
                break
            if n_reflect >= max_events:
                termination = "max_events"
                break
            continue
        if stop is not None:
            Xe = y[:d]
            events.append(GeodesicEvent(stop, s, Xe.copy(), y[d:].copy(), y[d:].copy()))
            termination = stop
            break
        # null drift control between chunks
        X, V = y[:d], y[d:]
        q = V @ metric.g(X) @ V
        if abs(q) > 10 * tol_null * max(1.0, V @ V):
            y[d:] = _renormalize_null(metric, X, V)
            renorm += 1
            segments.append(_close_segment(cur, d))
            cur = None
    if cur is not None:
        segments.append(_close_segment(cur, d))
    return BrokenNullGeodesic(segments, events, mode, renorm, termination)


def _close_segment(cur, d) -> GeodesicSegment:
    s = np.concatenate(cur["s"])
    Y = np.concatenate(cur["y"])
    pieces = cur["dense"]

    def dense(sq):
        for lo, hi, f in pieces:
            if min(lo, hi) - 1e-14 <= sq <= max(lo, hi) + 1e-14:
                return f(sq)
        raise ValueError(f"parameter {sq} outside segment")

    return GeodesicSegment(s, Y[:, :d], Y[:, d:], dense)


# ---------------------------------------------------------------------------
# transit classification and observation sets
# ---------------------------------------------------------------------------
@dataclass
class TransitRecord:
    cls: str  # NoEntry | I | IO | IOI
    t0: float | None = None
    t1: float | None = None
    t2: float | None = None
    tangency: bool = False
    contacts: list = field(default_factory=list)
    geodesic: BrokenNullGeodesic | None = None


def classify_transit(metric: Metric, z0, zeta0, **kw) -> TransitRecord:
    """Classify a ray launched from ``z0`` by its contacts with ``(0,T) x partial N``.

    ``t0, t1, t2`` are the affine parameters of the first, second and third
    contacts whose coordinate time lies in ``(0, T)``.
    """
    geo = integrate_null_geodesic(metric, z0, zeta0, "transmit", **kw)
    contacts = [e for e in geo.contacts if 0.0 < e.point[0] < metric.T]
    if contacts and contacts[0].kind == "tangent":
        return TransitRecord("NoEntry", tangency=True, contacts=contacts, geodesic=geo)
    s = [c.s for c in contacts]
    if len(s) == 0:
        return TransitRecord("NoEntry", contacts=contacts, geodesic=geo)
    if len(s) == 1:
        return TransitRecord("I", s[0], contacts=contacts, geodesic=geo)
    if len(s) == 2:
        return TransitRecord("IO", s[0], s[1], contacts=contacts, geodesic=geo)
    return TransitRecord("IOI", s[0], s[1], s[2], contacts=contacts, geodesic=geo)


@dataclass
class ObservationHit:
    direction: np.ndarray
    point: np.ndarray | None
    velocity: np.ndarray | None
    s: float | None
    censored: bool
    face: int = -1


def fan_directions(n: int, fan: int) -> np.ndarray:
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if n == 2:
        ang = 2 * np.pi * np.arange(fan) / fan
        return np.stack((np.cos(ang), np.sin(ang)), axis=1)
    raise ValueError("fan directions implemented for n in {1, 2}")


def earliest_observation_set(metric: Metric, q0, fan: int = 16, **kw) -> list[ObservationHit]:
    """First boundary hits of the future null rays from ``q0``."""
    X0 = as_coords(q0)
    if not (0 < X0[0] < metric.T) or metric.N.inside_value(X0[1:]) <= 0:
        raise PreconditionError("q0 must lie in (0,T) x interior(N)")
    out = []
    for u in fan_directions(metric.n, fan):
        v = null_vector(metric, X0, u)
        geo = integrate_null_geodesic(metric, X0, v, "transmit", **kw)
        hit = next((e for e in geo.contacts if e.s > 1e-12), None)
        if hit is None or hit.point[0] >= metric.T:
            out.append(ObservationHit(u, None, None, None, True))
        else:
            out.append(ObservationHit(u, hit.point, hit.v_in, hit.s, False, hit.face))
    return out


# ---------------------------------------------------------------------------
# boundary normal charts
# ---------------------------------------------------------------------------
def _rk4_geodesic(metric: Metric, X0, V0, length: float, h_step: float):
    rhs = _geodesic_rhs(metric)
    nsteps = max(8, int(math.ceil(abs(length) / h_step)))
    h = length / nsteps
    y = np.concatenate((X0, V0))
    for _ in range(nsteps):
        k1 = rhs(0, y)
        k2 = rhs(0, y + 0.5 * h * k1)
        k3 = rhs(0, y + 0.5 * h * k2)
        k4 = rhs(0, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


@dataclass
class BoundaryNormalChart:
    """Boundary normal coordinates ``(y, x_n)`` on one face of ``(0,T) x partial N``.

    ``y = (t, s)`` with ``s`` the face parameter (absent in 1+1; the free
    coordinate on a box face; the angle on a disk).
    """

    metric: Metric
    face: int
    h_step: float = 1e-3
    h_jac: float = 1e-4

    def boundary_point(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        dom = self.metric.N
        t = y[0]
        if dom.kind == "interval":
            xb = dom.lo[0] if self.face == 0 else dom.hi[0]
            return np.array([t, xb])
        if dom.kind == "box":
            axis, side = divmod(self.face, 2)
            x = np.empty(dom.dim)
            rest = iter(y[1:])
            for i in range(dom.dim):
                x[i] = (dom.lo[i] if side == 0 else dom.hi[i]) if i == axis else next(rest)
            return np.concatenate(([t], x))
        if dom.kind == "ball" and dom.dim == 2:
            c = np.asarray(dom.center)
            return np.concatenate(([t], c + dom.radius * np.array([math.cos(y[1]), math.sin(y[1])])))
        raise ValueError("unsupported boundary parametrization")

    def inward_normal(self, y) -> np.ndarray:
        X = self.boundary_point(y)
        return -outward_normal(self.metric, self.metric.N, X, self.face)

    def forward_state(self, y, xn: float) -> np.ndarray:
        X = self.boundary_point(y)
        if xn == 0:
            return np.concatenate((X, self.inward_normal(y)))
        return _rk4_geodesic(self.metric, X, self.inward_normal(y), xn, self.h_step)

    def forward(self, y, xn: float) -> np.ndarray:
        return self.forward_state(y, xn)[: self.metric.dim]

    def jacobian(self, y, xn: float) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        d = self.metric.dim
        J = np.zeros((d, d))
        w, off = _fd_weights()
        for a in range(len(y)):
            E = np.zeros(len(y))
            E[a] = self.h_jac
            J[:, a] = sum(wi * self.forward(y + oi * E, xn) for wi, oi in zip(w, off)) / self.h_jac
        J[:, d - 1] = self.forward_state(y, xn)[d:]
        return J

    def metric_at(self, y, xn: float) -> np.ndarray:
        """Pulled-back metric in the ordering ``(y, x_n)``."""
        J = self.jacobian(y, xn)
        G = self.metric.g(self.forward(y, xn))
        out = J.T @ G @ J
        return 0.5 * (out + out.T)


def boundary_normal_chart(metric: Metric, face: int, depth: float, patch: Sequence | None = None,
                          n_depth: int = 8, ratio_min: float = 0.1, **kw) -> BoundaryNormalChart:
    """Build boundary normal coordinates to depth ``depth`` and check they do not fold.

    ``patch`` is a list of boundary parameters ``y`` used for Jacobian monitoring.
    """
    chart = BoundaryNormalChart(metric, face, **kw)
    if patch is None:
        patch = [np.full(metric.n, 0.5 * metric.T if i == 0 else 0.0) for i in range(1)]
        if metric.n >= 2 and metric.N.kind == "box":
            patch = [np.array([0.5 * metric.T, 0.5])]
        elif metric.n == 1:
            patch = [np.array([0.5 * metric.T])]
    depths = np.linspace(0, depth, n_depth + 1)
    for y in patch:
        d0 = abs(np.linalg.det(chart.jacobian(y, 0.0)))
        for k, xn in enumerate(depths[1:], 1):
            X = chart.forward(y, xn)
            if not metric.N1.contains(X[1:]):
                raise ChartError(f"normal geodesic leaves N1 before depth {xn}", depths[k - 1])
            dk = abs(np.linalg.det(chart.jacobian(y, xn)))
            if dk < ratio_min * d0:
                raise ChartError(f"normal geodesics degenerate near depth {xn:.4g} (Jacobian ratio {dk / d0:.3g})",
                                 0.5 * depths[k - 1])
    return chart


# ---------------------------------------------------------------------------
# interaction sources
# ---------------------------------------------------------------------------
def interaction_covectors(n: int, r0: float, varsigma: float, sign: int = 1) -> np.ndarray:
    """Past null covectors ``theta_0..theta_3`` at ``q0`` in flat normalization."""
    if not 0 < varsigma < 1:
        raise DegeneracyError("varsigma must lie in (0, 1)")
    if not -1 <= r0 <= 1:
        raise DegeneracyError("r0 must lie in [-1, 1]")
    c = math.sqrt(1 - varsigma**2)
    w = math.sqrt(1 - r0**2)
    th = np.array([[-1.0, sign * w, r0, 0.0],
                   [-1.0, 1.0, 0.0, 0.0],
                   [-1.0, c, varsigma, 0.0],
                   [-1.0, c, -varsigma, 0.0]])
    if n == 2:
        return th[:, :3]
    if n == 3:
        return th
    raise ValueError("interaction covectors defined for n in {2, 3}")


@dataclass
class InteractionSource:
    z: np.ndarray
    zeta: np.ndarray
    direction: np.ndarray
    record: TransitRecord
    entry: np.ndarray | None = None  # boundary point of the ray through q0
    entry_face: int = -1


def choose_interaction_sources(metric: Metric, q0, varsigma: float, scale: float = 0.05, r0: float = 1.0,
                               sign: int = 1, require_positive_time: bool = True, **kw) -> list[InteractionSource]:
    """Four sources outside ``N`` whose forward null rays pass through ``q0``.

    In 1+1 two rays come from each side along the two null lines through
    ``q0``; the second source on each line sits ``scale`` further out.
    In 1+2 and 1+3 the directions are the raised covectors ``theta_j``.
    ``require_positive_time=False`` accepts sources at ``t <= 0`` (only the
    boundary contacts are used, e.g. for Dirichlet pulses).
    """
    X0 = as_coords(q0)
    if varsigma <= 0 or varsigma >= 1:
        raise DegeneracyError("varsigma must lie in (0, 1); varsigma = 0 makes theta_2 = theta_3")
    if metric.n == 1:
        dirs = [null_vector(metric, X0, [1.0]), null_vector(metric, X0, [1.0]),
                null_vector(metric, X0, [-1.0]), null_vector(metric, X0, [-1.0])]
        margins = [scale, 2 * scale, scale, 2 * scale]
    else:
        th = interaction_covectors(metric.n, r0, varsigma, sign)
        dirs = []
        for theta in th:
            v = raise_covector(metric, X0, theta)
            dirs.append(v / v[0])
        M = np.array(dirs)
        if np.linalg.matrix_rank(M, tol=1e-10) < min(4, metric.dim):
            raise DegeneracyError("interaction directions are rank deficient")
        for i in range(4):
            for j in range(i + 1, 4):
                if np.linalg.matrix_rank(M[[i, j]], tol=1e-10) < 2:
                    raise DegeneracyError(f"directions {i} and {j} are parallel")
        margins = [scale] * 4
    out = []
    for v, m in zip(dirs, margins):
        back = integrate_null_geodesic(metric, X0, -v, "transmit", allow_past=True, **kw)
        hit = next((e for e in back.contacts if e.s > 1e-12), None)
        if hit is None:
            raise GeometryError("backward ray never reaches the boundary")
        try:
            y = back.state_at(hit.s + m)
        except ValueError as exc:
            raise GeometryError("source margin leaves the integrated range") from exc
        z, zeta = y[: metric.dim], -y[metric.dim:]
        if not metric.N1.contains(z[1:]):
            raise GeometryError("source lies outside N1; reduce scale")
        if z[0] <= 0 and require_positive_time:
            raise GeometryError(f"source time {z[0]:.4g} is not positive; q0 is too early for this domain")
        rec = classify_transit(metric, z, zeta)
        out.append(InteractionSource(z, zeta, v, rec, np.array(hit.point, float), hit.face))
    return out
