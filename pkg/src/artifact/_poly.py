"""Truncated multivariate polynomial arithmetic on coefficient vectors.

A :class:`PolySpace` fixes the number of variables and a maximal total
degree.  Polynomials are 1-D (possibly complex) coefficient arrays indexed by
the monomial table ``exps``, graded by degree.  Products are truncated at the
maximal degree, which is exactly the arithmetic of Taylor jets.
"""

from __future__ import annotations

from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp


def _monomials(nv: int, D: int) -> list[tuple[int, ...]]:
    out = []
    for d in range(D + 1):
        block = []
        for combo in combinations_with_replacement(range(nv), d):
            e = [0] * nv
            for v in combo:
                e[v] += 1
            block.append(tuple(e))
        # lexicographically decreasing inside each degree: x0^d first
        out.extend(sorted(block, reverse=True))
    return out


class PolySpace:
    """Polynomials in ``nv`` variables truncated at total degree ``D``."""

    def __init__(self, nv: int, D: int):
        if nv < 1 or D < 0:
            raise ValueError("need nv >= 1 and D >= 0")
        self.nv = nv
        self.D = D
        self.exps = _monomials(nv, D)
        self.size = len(self.exps)
        self.index = {e: i for i, e in enumerate(self.exps)}
        self.deg = np.array([sum(e) for e in self.exps])
        self._E = np.array(self.exps, dtype=int).reshape(self.size, nv)

    # construction ---------------------------------------------------------
    def zero(self, dtype=complex) -> np.ndarray:
        return np.zeros(self.size, dtype=dtype)

    def const(self, c, dtype=complex) -> np.ndarray:
        a = self.zero(dtype)
        a[0] = c
        return a

    def var(self, k: int, dtype=complex) -> np.ndarray:
        a = self.zero(dtype)
        if self.D >= 1:
            e = [0] * self.nv
            e[k] = 1
            a[self.index[tuple(e)]] = 1.0
        return a

    def linear(self, coeffs, c0=0.0, dtype=complex) -> np.ndarray:
        a = self.const(c0, dtype)
        for k, ck in enumerate(coeffs):
            a = a + ck * self.var(k, dtype)
        return a

    def quadratic(self, M, dtype=complex) -> np.ndarray:
        """The form ``sum_ij M_ij x_i x_j``."""
        a = self.zero(dtype)
        M = np.asarray(M)
        if self.D < 2:
            return a
        for i in range(self.nv):
            for j in range(self.nv):
                e = [0] * self.nv
                e[i] += 1
                e[j] += 1
                a[self.index[tuple(e)]] += M[i, j]
        return a

    # structure ------------------------------------------------------------
    def mask(self, k: int) -> np.ndarray:
        return self.deg == k

    def part(self, a: np.ndarray, k: int) -> np.ndarray:
        """Homogeneous degree-``k`` part."""
        return np.where(self.deg == k, a, 0)

    def truncate(self, a: np.ndarray, k: int) -> np.ndarray:
        """Drop all terms of degree above ``k``."""
        return np.where(self.deg <= k, a, 0)

    @cached_property
    def _mul(self) -> sp.csr_matrix:
        rows, cols = [], []
        n = self.size
        for i, ei in enumerate(self.exps):
            for j, ej in enumerate(self.exps):
                if self.deg[i] + self.deg[j] > self.D:
                    continue
                e = tuple(a + b for a, b in zip(ei, ej))
                rows.append(self.index[e])
                cols.append(i * n + j)
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n * n))

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._mul @ np.outer(a, b).ravel()

    def power(self, a: np.ndarray, k: int) -> np.ndarray:
        out = self.const(1.0, dtype=np.result_type(a, float))
        for _ in range(k):
            out = self.mul(out, a)
        return out

    @cached_property
    def _dmats(self) -> list[np.ndarray]:
        mats = []
        for v in range(self.nv):
            M = np.zeros((self.size, self.size))
            for i, e in enumerate(self.exps):
                if e[v] == 0:
                    continue
                f = list(e)
                f[v] -= 1
                M[self.index[tuple(f)], i] = e[v]
            mats.append(M)
        return mats

    def deriv(self, a: np.ndarray, v: int) -> np.ndarray:
        return self._dmats[v] @ a

    def grad(self, a: np.ndarray) -> list[np.ndarray]:
        return [self.deriv(a, v) for v in range(self.nv)]

    @cached_property
    def _imats(self) -> list[np.ndarray]:
        mats = []
        for v in range(self.nv):
            M = np.zeros((self.size, self.size))
            for i, e in enumerate(self.exps):
                f = list(e)
                f[v] += 1
                f = tuple(f)
                if f in self.index:
                    M[self.index[f], i] = 1.0 / f[v]
            mats.append(M)
        return mats

    def integrate(self, a: np.ndarray, v: int) -> np.ndarray:
        """Antiderivative in variable ``v`` vanishing on ``x_v = 0`` (truncated)."""
        return self._imats[v] @ a

    def reciprocal(self, a: np.ndarray) -> np.ndarray:
        """Truncated series of ``1/a``; requires a nonzero constant term."""
        c = a[0]
        if c == 0:
            raise ZeroDivisionError("constant term vanishes")
        r = a / c
        r[0] = 0.0
        out = self.const(1.0, dtype=np.result_type(a, float))
        term = out.copy()
        for _ in range(self.D):
            term = -self.mul(term, r)
            out = out + term
        return out / c

    # evaluation -----------------------------------------------------------
    def monomials_at(self, X: np.ndarray) -> np.ndarray:
        """Monomial values, shape ``(m, size)`` for points ``X`` of shape ``(m, nv)``."""
        X = np.atleast_2d(np.asarray(X))
        m = X.shape[0]
        pw = np.ones((self.nv, self.D + 1, m), dtype=X.dtype if np.iscomplexobj(X) else float)
        for p in range(1, self.D + 1):
            pw[:, p, :] = pw[:, p - 1, :] * X.T
        out = np.ones((m, self.size), dtype=pw.dtype)
        for v in range(self.nv):
            out *= pw[v, self._E[:, v], :].T
        return out

    def eval(self, a: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self.monomials_at(X) @ a

    def compose_affine(self, a: np.ndarray, A: np.ndarray, x0=None, target: "PolySpace" | None = None):
        """Substitute ``x = x0 + A y`` and return the result in variables ``y``.

        ``A`` has shape ``(nv, target.nv)``.  The result is truncated at the
        target's degree.
        """
        target = target or self
        A = np.asarray(A)
        x0 = np.zeros(self.nv) if x0 is None else np.asarray(x0)
        subs = [target.linear(A[i], c0=x0[i], dtype=complex) for i in range(self.nv)]
        pows = []
        for i in range(self.nv):
            row = [target.const(1.0)]
            for _ in range(self.D):
                row.append(target.mul(row[-1], subs[i]))
            pows.append(row)
        out = target.zero()
        for coef, e in zip(a, self.exps):
            if coef == 0:
                continue
            term = target.const(coef)
            for i, p in enumerate(e):
                if p:
                    term = target.mul(term, pows[i][p])
            out = out + term
        return out
