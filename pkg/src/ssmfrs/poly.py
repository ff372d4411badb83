"""Multi-index complex polynomials in conjugate variable pairs.

A :class:`MultiIndexPoly` represents a vector-valued map

    P(q, qbar) = sum_{(c, d)} w_(c,d) * q^c * qbar^d

where ``c`` and ``d`` are tuples of non-negative integers of length
``num_vars`` and every coefficient ``w_(c,d)`` is a complex vector of fixed
length ``dim``.  The same container stores SSM parameterizations, reduced
dynamics and physical nonlinearities (for the latter ``d`` is always zero and
the polynomial is evaluated with ``qbar = q``).
"""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping

import numpy as np

Key = tuple[tuple[int, ...], tuple[int, ...]]


class MultiIndexPoly:
    """Immutable sparse polynomial with vector coefficients.

    Parameters
    ----------
    num_vars : int
        Number of variable pairs ``(q_k, qbar_k)``.
    dim : int
        Length of every coefficient vector.
    terms : mapping or iterable of ((c, d), coeff)
        Exponent pairs and coefficients.  Duplicate keys are summed and terms
        whose coefficient is exactly zero are dropped.
    """

    __slots__ = ("num_vars", "dim", "_terms", "_c", "_d", "_w", "_cache")

    def __init__(self, num_vars: int, dim: int, terms: Mapping | Iterable = ()):
        if num_vars < 1 or dim < 1:
            raise ValueError("num_vars and dim must be positive")
        self.num_vars = int(num_vars)
        self.dim = int(dim)
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Key, np.ndarray] = {}
        for (c, d), coeff in items:
            c = tuple(int(x) for x in c)
            d = tuple(int(x) for x in d)
            if len(c) != self.num_vars or len(d) != self.num_vars:
                raise ValueError(f"exponent length mismatch for term {(c, d)}")
            if min(c + d) < 0:
                raise ValueError(f"negative exponent in term {(c, d)}")
            w = np.asarray(coeff, dtype=complex).reshape(-1)
            if w.size == 1 and self.dim > 1:
                raise ValueError("scalar coefficient for vector-valued polynomial")
            if w.size != self.dim:
                raise ValueError(f"coefficient length {w.size} != dim {self.dim}")
            key = (c, d)
            acc[key] = acc[key] + w if key in acc else w.copy()
        self._terms = {k: acc[k] for k in sorted(acc, key=_sort_key) if np.any(acc[k] != 0)}
        for w in self._terms.values():
            w.setflags(write=False)
        n = len(self._terms)
        self._c = np.array([k[0] for k in self._terms], dtype=int).reshape(n, self.num_vars)
        self._d = np.array([k[1] for k in self._terms], dtype=int).reshape(n, self.num_vars)
        self._w = np.array(list(self._terms.values()), dtype=complex).reshape(n, self.dim)
        self._cache: dict = {}

    # ------------------------------------------------------------------ access
    @property
    def terms(self) -> dict[Key, np.ndarray]:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def __contains__(self, key) -> bool:
        return key in self._terms

    def coeff(self, c, d) -> np.ndarray:
        """Coefficient of ``q^c qbar^d`` (zeros if absent)."""
        key = (tuple(c), tuple(d))
        return self._terms.get(key, np.zeros(self.dim, dtype=complex))

    @property
    def degrees(self) -> np.ndarray:
        return self._c.sum(axis=1) + self._d.sum(axis=1)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if len(self) else 0

    def __repr__(self) -> str:
        return f"MultiIndexPoly(num_vars={self.num_vars}, dim={self.dim}, terms={len(self)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiIndexPoly):
            return NotImplemented
        if (self.num_vars, self.dim) != (other.num_vars, other.dim):
            return False
        if self._terms.keys() != other._terms.keys():
            return False
        return all(np.array_equal(w, other._terms[k]) for k, w in self._terms.items())

    __hash__ = None

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other: MultiIndexPoly) -> MultiIndexPoly:
        self._check_compatible(other)
        return MultiIndexPoly(self.num_vars, self.dim, list(self) + list(other))

    def __sub__(self, other: MultiIndexPoly) -> MultiIndexPoly:
        return self + (-1.0) * other

    def __mul__(self, scalar) -> MultiIndexPoly:
        s = complex(scalar)
        return MultiIndexPoly(self.num_vars, self.dim, [(k, s * w) for k, w in self])

    __rmul__ = __mul__

    def _check_compatible(self, other: MultiIndexPoly) -> None:
        if (self.num_vars, self.dim) != (other.num_vars, other.dim):
            raise ValueError("incompatible polynomial shapes")

    def select(self, predicate) -> MultiIndexPoly:
        """Sub-polynomial of the terms whose key satisfies ``predicate(c, d)``."""
        return MultiIndexPoly(self.num_vars, self.dim, [(k, w) for k, w in self if predicate(*k)])

    def component(self, rows) -> MultiIndexPoly:
        """Restrict the output to the given coefficient rows."""
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        return MultiIndexPoly(self.num_vars, rows.size, [(k, w[rows]) for k, w in self])

    def map_coeffs(self, func) -> MultiIndexPoly:
        """Apply ``func`` to every coefficient vector (output dim may change)."""
        new = [(k, np.asarray(func(w), dtype=complex).reshape(-1)) for k, w in self]
        dim = new[0][1].size if new else self.dim
        return MultiIndexPoly(self.num_vars, dim, new)

    def truncate(self, max_degree: int) -> MultiIndexPoly:
        return self.select(lambda c, d: sum(c) + sum(d) <= max_degree)

    def homogeneous(self, degree: int) -> MultiIndexPoly:
        return self.select(lambda c, d: sum(c) + sum(d) == degree)

    def normalize(self, rel_tol: float = 1e-14) -> MultiIndexPoly:
        """Drop terms with magnitude below ``rel_tol`` times the largest term."""
        if not len(self):
            return self
        mags = np.abs(self._w).max(axis=1)
        cut = rel_tol * mags.max()
        return MultiIndexPoly(self.num_vars, self.dim, [(k, w) for (k, w), m in zip(self, mags) if m >= cut])

    # -------------------------------------------------------------- evaluation
    def _check_args(self, q, qbar):
        q = np.asarray(q, dtype=complex)
        qbar = np.asarray(qbar, dtype=complex)
        if q.shape != qbar.shape or q.shape[-1:] != (self.num_vars,):
            raise ValueError(f"expected trailing dimension {self.num_vars}, got {q.shape} and {qbar.shape}")
        return q, qbar

    @staticmethod
    def _monomials(q, qbar, c, d):
        """Values of q^c qbar^d for each exponent row, shape (..., T)."""
        if c.shape[0] == 0:
            return np.zeros(q.shape[:-1] + (0,), dtype=complex)
        out = np.ones(q.shape[:-1] + (c.shape[0],), dtype=complex)
        for k in range(c.shape[1]):
            ck, dk = c[:, k], d[:, k]
            if ck.any():
                out = out * q[..., k : k + 1] ** ck
            if dk.any():
                out = out * qbar[..., k : k + 1] ** dk
        return out

    def eval(self, q, qbar) -> np.ndarray:
        """Evaluate at ``(q, qbar)``; leading dimensions broadcast as a batch."""
        q, qbar = self._check_args(q, qbar)
        return self._monomials(q, qbar, self._c, self._d) @ self._w

    __call__ = eval

    def diff(self, var: int, conj: bool = False) -> MultiIndexPoly:
        """Derivative polynomial with respect to ``q_var`` (or ``qbar_var``)."""
        key = ("diff", var, conj)
        if key not in self._cache:
            if not 0 <= var < self.num_vars:
                raise ValueError(f"variable index {var} out of range")
            new = []
            for (c, d), w in self:
                e = d if conj else c
                if e[var] == 0:
                    continue
                e2 = list(e)
                e2[var] -= 1
                nk = (c, tuple(e2)) if conj else (tuple(e2), d)
                new.append((nk, e[var] * w))
            self._cache[key] = MultiIndexPoly(self.num_vars, self.dim, new)
        return self._cache[key]

    def active_vars(self) -> tuple[list[int], list[int]]:
        """Indices of variables that appear in some term (q-side, qbar-side)."""
        return (list(np.flatnonzero(self._c.any(axis=0))), list(np.flatnonzero(self._d.any(axis=0))))

    def partials(self, q, qbar) -> tuple[np.ndarray, np.ndarray]:
        """Analytic partials, each of shape (..., dim, num_vars)."""
        q, qbar = self._check_args(q, qbar)
        shape = q.shape[:-1] + (self.dim, self.num_vars)
        dq = np.zeros(shape, dtype=complex)
        dqbar = np.zeros(shape, dtype=complex)
        act_q, act_qbar = self.active_vars()
        for k in act_q:
            dq[..., k] = self.diff(k).eval(q, qbar)
        for k in act_qbar:
            dqbar[..., k] = self.diff(k, conj=True).eval(q, qbar)
        return dq, dqbar

    def second_partials(self, q, qbar) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Second partials ``(P_qq, P_q qbar, P_qbar qbar)`` of shape (dim, n, n).

        ``P_q qbar[:, j, k]`` is the derivative with respect to ``q_j`` and
        ``qbar_k``.
        """
        q, qbar = self._check_args(q, qbar)
        n = self.num_vars
        hqq = np.zeros((self.dim, n, n), dtype=complex)
        hqb = np.zeros((self.dim, n, n), dtype=complex)
        hbb = np.zeros((self.dim, n, n), dtype=complex)
        act_q, act_qbar = self.active_vars()
        for j in act_q:
            pj = self.diff(j)
            for k in range(j, n):
                hqq[:, j, k] = hqq[:, k, j] = pj.diff(k).eval(q, qbar)
            for k in range(n):
                hqb[:, j, k] = pj.diff(k, conj=True).eval(q, qbar)
        for j in act_qbar:
            pj = self.diff(j, conj=True)
            for k in range(j, n):
                hbb[:, j, k] = hbb[:, k, j] = pj.diff(k, conj=True).eval(q, qbar)
        return hqq, hqb, hbb

    # ----------------------------------------------------------- serialization
    def to_records(self) -> list[dict]:
        return [
            {"c": list(c), "d": list(d), "re": w.real.tolist(), "im": w.imag.tolist()}
            for (c, d), w in self
        ]

    @classmethod
    def from_records(cls, records: list[dict], num_vars: int, dim: int) -> MultiIndexPoly:
        terms = []
        for i, rec in enumerate(records):
            try:
                w = np.asarray(rec["re"], float) + 1j * np.asarray(rec["im"], float)
                terms.append(((rec["c"], rec["d"]), w))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"malformed polynomial record {i}: {exc}") from exc
        return cls(num_vars, dim, terms)

    @classmethod
    def zero(cls, num_vars: int, dim: int) -> MultiIndexPoly:
        return cls(num_vars, dim)


def _sort_key(key: Key):
    c, d = key
    return (sum(c) + sum(d), c, d)


# ---------------------------------------------------------------------------
# Truncated power-series products, used for composing a nonlinearity with an
# SSM parameterization.  Series are dicts {(c, d): complex scalar}.
# ---------------------------------------------------------------------------

Series = dict


def series_mul(a: Series, b: Series, max_degree: int) -> Series:
    out: dict = defaultdict(complex)
    for (ca, da), wa in a.items():
        deg_a = sum(ca) + sum(da)
        for (cb, db), wb in b.items():
            if deg_a + sum(cb) + sum(db) > max_degree:
                continue
            key = (tuple(x + y for x, y in zip(ca, cb)), tuple(x + y for x, y in zip(da, db)))
            out[key] += wa * wb
    return dict(out)


def series_pow(base: Series, power: int, max_degree: int, cache: dict | None = None) -> Series:
    """``base**power`` truncated at ``max_degree`` (``cache`` keyed by power)."""
    if cache is not None and power in cache:
        return cache[power]
    if power == 0:
        nv = len(next(iter(base))[0]) if base else 0
        result = {((0,) * nv, (0,) * nv): 1.0 + 0j}
    elif power == 1:
        result = {k: v for k, v in base.items() if sum(k[0]) + sum(k[1]) <= max_degree}
    else:
        half = series_pow(base, power // 2, max_degree, cache)
        result = series_mul(half, half, max_degree)
        if power % 2:
            result = series_mul(result, base, max_degree)
    if cache is not None:
        cache[power] = result
    return result


def compose(outer: MultiIndexPoly, inner: MultiIndexPoly, max_degree: int) -> MultiIndexPoly:
    """Truncated composition ``outer(inner(p), conj(inner(p)))``.

    ``outer`` must have ``d = 0`` on all its terms (a polynomial in a real
    state evaluated with ``qbar = q``) and ``inner`` must be real-valued on the
    conjugate-symmetric set so that substituting ``z`` for ``zbar`` is exact.
    ``inner`` must have no constant term.
    """
    if outer.num_vars != inner.dim:
        raise ValueError("outer.num_vars must equal inner.dim")
    if np.any(outer._d):
        raise ValueError("outer polynomial must not depend on qbar")
    comps: dict[int, Series] = {}
    pow_cache: dict[int, dict] = {}
    terms = []
    for (c, _), w in outer:
        if sum(c) > max_degree:
            continue
        prod: Series | None = None
        for var, e in enumerate(c):
            if e == 0:
                continue
            if var not in comps:
                comps[var] = {k: v[var] for k, v in inner if v[var] != 0}
                pow_cache[var] = {}
            factor = series_pow(comps[var], e, max_degree, pow_cache[var])
            prod = factor if prod is None else series_mul(prod, factor, max_degree)
        if prod is None:
            continue
        terms.extend((k, val * w) for k, val in prod.items())
    return MultiIndexPoly(inner.num_vars, outer.dim, terms)
