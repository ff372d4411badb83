"""Harmonic decomposition of lifted responses and amplitude functionals.

The lifted periodic response is a finite Fourier sum
``z(t) = sum_k w_k e^{i k Omega t}`` whose harmonics ``w_k`` are polynomials in
the slow coordinates (plus ``eps x0`` at ``k = +-1`` in TV mode).  Two
functionals are provided:

* ``A_L2 = sqrt(mean_t z_I^T Q z_I) = sqrt(sum_k w_{k,I}^H Qbar w_{k,I})``
* ``A_opt(t) = z_opt(t)``, a smooth surrogate whose maximum over ``t`` is the
  peak value of one state component.

All derivatives are analytic.  The jet over ``v = (y, Omega, eps, t)`` is
available to second order in Cartesian coordinates.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .rom import SlowState, real_partials
from .ssm import NonAutoCorrection, SSMModel, compute_nonautonomous_correction

ONE, MINUS_ONE = Fraction(1), Fraction(-1)


@dataclass(frozen=True)
class AmplitudeSpec:
    """Amplitude functional definition.

    ``kind='L2'`` uses the index set ``indices`` and weight ``Q`` (identity by
    default, symmetrized internally).  ``kind='OPT'`` uses ``indices[0]``.
    """

    kind: str
    indices: tuple
    Q: np.ndarray | None = None
    name: str = "amplitude"

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in ("L2", "OPT"):
            raise ValueError("kind must be 'L2' or 'OPT'")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "indices", tuple(int(i) for i in np.atleast_1d(self.indices)))
        if kind == "OPT" and len(self.indices) != 1:
            raise ValueError("OPT amplitude needs exactly one index")
        if kind == "L2":
            Q = np.eye(len(self.indices)) if self.Q is None else np.atleast_2d(np.asarray(self.Q, float))
            if Q.shape != (len(self.indices),) * 2:
                raise ValueError("Q must be |I| x |I|")
            object.__setattr__(self, "Q", Q)

    @property
    def Qbar(self) -> np.ndarray:
        return 0.5 * (self.Q + self.Q.T)

    @classmethod
    def l2(cls, indices, Q=None, name="L2") -> AmplitudeSpec:
        return cls("L2", tuple(np.atleast_1d(indices)), Q, name)

    @classmethod
    def opt(cls, index: int, name="opt") -> AmplitudeSpec:
        return cls("OPT", (int(index),), None, name)

    @classmethod
    def kinetic(cls, mech, name="kinetic") -> AmplitudeSpec:
        """Velocity components weighted by ``M / 2``."""
        n = mech.n
        return cls("L2", tuple(range(n, 2 * n)), 0.5 * mech.M, name)

    def check(self, N: int) -> None:
        if min(self.indices) < 0 or max(self.indices) >= N:
            raise ValueError(f"amplitude index out of range for N={N}")


@dataclass(frozen=True)
class HarmonicDecomposition:
    """Map harmonic number -> complex N-vector (conjugate symmetric)."""

    harmonics: dict = field(default_factory=dict)

    def __getitem__(self, k):
        return self.harmonics[Fraction(k)]

    def __contains__(self, k) -> bool:
        return Fraction(k) in self.harmonics

    def keys(self):
        return self.harmonics.keys()

    def evaluate(self, Omega: float, t) -> np.ndarray:
        """Time signal ``sum_k w_k e^{i k Omega t}`` (real part), shape t.shape + (N,)."""
        t = np.asarray(t, dtype=float)
        out = 0.0
        for k, w in self.harmonics.items():
            out = out + np.multiply.outer(np.exp(1j * float(k) * Omega * t), w)
        return np.real(out)


class CorrectionCache:
    """Small LRU cache of forced corrections keyed by ``Omega``."""

    def __init__(self, fos, ssm: SSMModel, size: int = 8):
        self.fos, self.ssm, self.size = fos, ssm, size
        self._store: OrderedDict = OrderedDict()

    def __call__(self, Omega: float) -> NonAutoCorrection:
        key = float(Omega)
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        corr = compute_nonautonomous_correction(self.fos, self.ssm, key)
        self._store[key] = corr
        if len(self._store) > self.size:
            self._store.popitem(last=False)
        return corr


def _resolve_correction(mode, correction, fos, ssm, Omega, need_derivs=False):
    if mode.upper() != "TV":
        return None
    if callable(correction) and not isinstance(correction, NonAutoCorrection):
        correction = correction(Omega)
    if correction is None or (need_derivs and correction.dx0 is None):
        if fos is None:
            raise ValueError("TV mode needs a NonAutoCorrection or the first-order system")
        correction = compute_nonautonomous_correction(fos, ssm, Omega)
    if not np.isclose(correction.Omega, Omega, rtol=1e-14, atol=0):
        raise ValueError("correction was computed at a different Omega")
    return correction


def assemble_harmonics(ssm: SSMModel, s: SlowState, correction=None, mode: str = "TI", fos=None,
                       rows=None) -> HarmonicDecomposition:
    """Harmonics of the lifted response at slow state ``s``.

    ``rows`` optionally restricts the output to a subset of state components.
    """
    mode = mode.upper()
    corr = _resolve_correction(mode, correction, fos, ssm, s.Omega)
    q = s.q
    out = {}
    for k, poly in ssm.harmonic_groups.items():
        P = poly if rows is None else poly.component(rows)
        out[k] = P.eval(q, q.conj())
    if corr is not None and s.eps != 0:
        x0 = corr.x0 if rows is None else corr.x0[np.asarray(rows)]
        dim = x0.size
        out[ONE] = out.get(ONE, np.zeros(dim, complex)) + s.eps * x0
        out[MINUS_ONE] = out.get(MINUS_ONE, np.zeros(dim, complex)) + s.eps * x0.conj()
    return HarmonicDecomposition(dict(sorted(out.items())))


def amp_L2(spec: AmplitudeSpec, harm: HarmonicDecomposition) -> float:
    """``sqrt(sum_k w_{k,I}^H Qbar w_{k,I})``."""
    if spec.kind != "L2":
        raise ValueError("amp_L2 needs an L2 spec")
    idx = np.asarray(spec.indices)
    Qb = spec.Qbar
    total = 0.0 + 0.0j
    for w in harm.harmonics.values():
        if idx.max() >= w.size:
            raise ValueError("amplitude index out of range")
        wi = w[idx]
        total += wi.conj() @ Qb @ wi
    return float(np.sqrt(max(total.real, 0.0)))


def amp_opt(spec: AmplitudeSpec, harm: HarmonicDecomposition, Omega: float, t: float) -> float:
    """``z_opt(t) = sum_k w_{k,opt} e^{i k Omega t}`` (real)."""
    if spec.kind != "OPT":
        raise ValueError("amp_opt needs an OPT spec")
    j = spec.indices[0]
    total = 0.0 + 0.0j
    for k, w in harm.harmonics.items():
        if j >= w.size:
            raise ValueError("amplitude index out of range")
        total += w[j] * np.exp(1j * float(k) * Omega * t)
    return float(total.real)


# ---------------------------------------------------------------- derivatives
def _harmonic_jets(spec, ssm, s, corr, second):
    """Per-harmonic value and derivatives (restricted to the spec's rows).

    Yields ``(k, w, dw, d2w)`` with ``dw`` of shape (|I|, nv) and ``d2w`` of
    shape (|I|, nv, nv), ``nv = 2m + 3`` over ``(y, Omega, eps, t)``.
    """
    m = ssm.m
    nv = 2 * m + 3
    iO, ie = 2 * m, 2 * m + 1
    rows = np.asarray(spec.indices)
    q = s.q
    keys = set(ssm.harmonic_groups)
    if corr is not None:
        keys |= {ONE, MINUS_ONE}
    for k in sorted(keys):
        nI = rows.size
        w = np.zeros(nI, complex)
        dw = np.zeros((nI, nv), complex)
        d2w = np.zeros((nI, nv, nv), complex) if second else None
        if k in ssm.harmonic_groups:
            P = ssm.harmonic_groups[k].component(rows)
            val, D, H = real_partials(P, q, polar=s.polar, second=second)
            w += val
            dw[:, : 2 * m] = D
            if second:
                d2w[:, : 2 * m, : 2 * m] = H
        if corr is not None and k in (ONE, MINUS_ONE):
            conj = np.conj if k == MINUS_ONE else (lambda x: x)
            x0 = conj(corr.x0[rows])
            dx0 = conj(corr.dx0[rows])
            w += s.eps * x0
            dw[:, iO] += s.eps * dx0
            dw[:, ie] += x0
            if second:
                d2w[:, iO, iO] += s.eps * conj(corr.d2x0[rows])
                d2w[:, iO, ie] += dx0
                d2w[:, ie, iO] += dx0
        yield k, w, dw, d2w


def amplitude_jet(spec: AmplitudeSpec, ssm: SSMModel, s: SlowState, mode: str = "TI", correction=None,
                  t: float = 0.0, second: bool = False, fos=None):
    """Amplitude with gradient (and Hessian) over ``v = (y, Omega, eps, t)``.

    For L2 specs the ``t`` entries are zero.  Hessians require Cartesian
    coordinates.
    """
    mode = mode.upper()
    corr = _resolve_correction(mode, correction, fos, ssm, s.Omega, need_derivs=True)
    if corr is not None and second and corr.d2x0 is None:
        corr = compute_nonautonomous_correction(fos, ssm, s.Omega)
    m = ssm.m
    nv = 2 * m + 3
    iO, it = 2 * m, 2 * m + 2
    jets = list(_harmonic_jets(spec, ssm, s, corr, second))
    if spec.kind == "L2":
        Qb = spec.Qbar
        S = 0.0
        dS = np.zeros(nv)
        d2S = np.zeros((nv, nv)) if second else None
        for _, w, dw, d2w in jets:
            Qw = Qb @ w
            S += np.real(w.conj() @ Qw)
            dS += 2 * np.real(Qw.conj() @ dw)
            if second:
                d2S += 2 * np.real(dw.conj().T @ Qb @ dw + np.einsum("i,iab->ab", Qw.conj(), d2w))
        A = np.sqrt(max(S, 0.0))
        if A == 0:
            return 0.0, np.zeros(nv), (np.zeros((nv, nv)) if second else None)
        dA = dS / (2 * A)
        d2A = d2S / (2 * A) - np.outer(dS, dS) / (4 * A**3) if second else None
        return float(A), dA, d2A
    Om = s.Omega
    A = 0.0
    dA = np.zeros(nv)
    d2A = np.zeros((nv, nv)) if second else None
    for k, w, dw, d2w in jets:
        kf = float(k)
        E = np.exp(1j * kf * Om * t)
        dE = np.zeros(nv, complex)
        dE[iO] = 1j * kf * t * E
        dE[it] = 1j * kf * Om * E
        A += np.real(w[0] * E)
        dA += np.real(dw[0] * E + w[0] * dE)
        if second:
            d2E = np.zeros((nv, nv), complex)
            d2E[iO, iO] = -(kf * t) ** 2 * E
            d2E[it, it] = -(kf * Om) ** 2 * E
            d2E[iO, it] = d2E[it, iO] = (1j * kf - kf**2 * Om * t) * E
            d2A += np.real(d2w[0] * E + np.outer(dw[0], dE) + np.outer(dE, dw[0]) + w[0] * d2E)
    return float(A), dA, d2A


def grad_amp_L2(spec: AmplitudeSpec, ssm: SSMModel, s: SlowState, correction=None, mode: str = "TI", fos=None):
    """``(dA/dy, dA/dOmega, dA/deps)`` of the L2 amplitude."""
    if spec.kind != "L2":
        raise ValueError("grad_amp_L2 needs an L2 spec")
    _, g, _ = amplitude_jet(spec, ssm, s, mode, correction, fos=fos)
    m2 = 2 * ssm.m
    return g[:m2], float(g[m2]), float(g[m2 + 1])


def grad_amp_opt(spec: AmplitudeSpec, ssm: SSMModel, s: SlowState, correction=None, mode: str = "TI",
                 t: float = 0.0, fos=None):
    """``(dA/dy, dA/dOmega, dA/deps, dA/dt)`` of the sampled amplitude ``z_opt(t)``."""
    if spec.kind != "OPT":
        raise ValueError("grad_amp_opt needs an OPT spec")
    _, g, _ = amplitude_jet(spec, ssm, s, mode, correction, t=t, fos=fos)
    m2 = 2 * ssm.m
    return g[:m2], float(g[m2]), float(g[m2 + 1]), float(g[m2 + 2])


def peak_time(spec: AmplitudeSpec, harm: HarmonicDecomposition, Omega: float, samples: int = 64,
              tol: float = 1e-12) -> float:
    """Time of the maximum of ``z_opt`` over one period (grid seeding + Newton)."""
    T = 2 * np.pi / Omega
    ts = np.linspace(0, T, samples, endpoint=False)
    j = spec.indices[0]
    ks = np.array([float(k) for k in harm.keys()])
    ws = np.array([w[j] for w in harm.harmonics.values()])

    def derivs(tt):
        E = ws * np.exp(1j * ks * Omega * tt)
        return (np.real(E.sum()), np.real((1j * ks * Omega * E).sum()), np.real((-(ks * Omega) ** 2 * E).sum()))

    vals = [derivs(tt)[0] for tt in ts]
    tt = ts[int(np.argmax(vals))]
    for _ in range(50):
        _, d1, d2 = derivs(tt)
        if abs(d1) <= tol * max(1.0, np.abs(ws).sum() * Omega) or d2 >= 0:
            break
        tt -= d1 / d2
    return float(tt % T)
