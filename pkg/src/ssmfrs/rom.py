"""Slow reduced dynamics, fixed points and lifting to the full system.

In coordinates co-rotating with the forcing, ``q_i = q_{s,i} e^{i r_i Omega t}``,
the leading-order reduced dynamics become autonomous:

    q_s' = G(q_s) = S(q_s, conj(q_s)) - i r Omega q_s + eps f,

where ``S`` collects the resonant terms of ``R`` that survive averaging
(``(c - d) . r = r_i``), including the linear part ``lambda_i q_i``.  Fixed
points of ``G`` are periodic orbits of the full system.

Real coordinates are either Cartesian ``y = (Re q_1, Im q_1, ...)`` or polar
``y = (rho_1, theta_1, ...)`` with ``q_s = rho e^{i theta}``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .poly import MultiIndexPoly
from .ssm import NonAutoCorrection, SSMModel, check_reality, compute_nonautonomous_correction

log = logging.getLogger(__name__)

RHO_MIN = 1e-8


class ConvergenceError(RuntimeError):
    """Newton iteration failed to converge."""


@dataclass(frozen=True)
class SlowState:
    """A point ``(y, Omega, eps)`` in slow coordinates."""

    coords: np.ndarray
    Omega: float
    eps: float
    polar: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float).copy())
        if self.coords.ndim != 1 or self.coords.size % 2:
            raise ValueError("coords must be a flat array of even length")
        if self.polar and np.any(self.coords[0::2] <= 0):
            raise ValueError("polar coordinates require rho > 0")

    @property
    def m(self) -> int:
        return self.coords.size // 2

    @property
    def q(self) -> np.ndarray:
        """Complex slow amplitudes ``q_s``."""
        a, b = self.coords[0::2], self.coords[1::2]
        return a * np.exp(1j * b) if self.polar else a + 1j * b

    def to_cartesian(self) -> SlowState:
        if not self.polar:
            return self
        q = self.q
        return SlowState(np.column_stack([q.real, q.imag]).ravel(), self.Omega, self.eps, False)

    def to_polar(self) -> SlowState:
        if self.polar:
            return self
        q = self.q
        return SlowState(np.column_stack([np.abs(q), np.angle(q)]).ravel(), self.Omega, self.eps, True)

    @classmethod
    def from_q(cls, q, Omega, eps, polar=False) -> SlowState:
        q = np.atleast_1d(np.asarray(q, dtype=complex))
        coords = np.column_stack([np.abs(q), np.angle(q)] if polar else [q.real, q.imag]).ravel()
        return cls(coords, Omega, eps, polar)


@dataclass(frozen=True)
class FixedPointInfo:
    state: SlowState
    eigenvalues: np.ndarray
    stable: bool
    hyperbolic: bool
    residual: float = 0.0
    iterations: int = 0


# ----------------------------------------------------- complex -> real calculus
def _operators(q: np.ndarray, polar: bool):
    """Matrices ``Pq, Pb`` with ``d/dy_a = sum_j Pq[j,a] d/dq_j + Pb[j,a] d/dqbar_j``."""
    m = q.size
    Pq = np.zeros((m, 2 * m), complex)
    Pb = np.zeros((m, 2 * m), complex)
    j = np.arange(m)
    if polar:
        phase = np.exp(1j * np.angle(q))
        Pq[j, 2 * j], Pb[j, 2 * j] = phase, phase.conj()
        Pq[j, 2 * j + 1], Pb[j, 2 * j + 1] = 1j * q, -1j * q.conj()
    else:
        Pq[j, 2 * j], Pb[j, 2 * j] = 1.0, 1.0
        Pq[j, 2 * j + 1], Pb[j, 2 * j + 1] = 1j, -1j
    return Pq, Pb


def real_partials(poly: MultiIndexPoly, q: np.ndarray, polar: bool = False, second: bool = False):
    """Value and derivatives of ``poly(q, conj q)`` with respect to real coords.

    Returns ``(value, D, H)`` where ``D`` has shape (dim, 2m) and ``H`` has
    shape (dim, 2m, 2m) (``None`` unless ``second``).  Second derivatives are
    only available in Cartesian coordinates, where the operators are constant.
    """
    q = np.asarray(q, dtype=complex)
    qb = q.conj()
    val = poly.eval(q, qb)
    dq, db = poly.partials(q, qb)
    Pq, Pb = _operators(q, polar)
    D = dq @ Pq + db @ Pb
    H = None
    if second:
        if polar:
            raise ValueError("second derivatives are provided in Cartesian coordinates only")
        hqq, hqb, hbb = poly.second_partials(q, qb)
        H = (np.einsum("ja,kb,ojk->oab", Pq, Pq, hqq) + np.einsum("ja,kb,ojk->oab", Pq, Pb, hqb)
             + np.einsum("ja,kb,okj->oab", Pb, Pq, hqb) + np.einsum("ja,kb,ojk->oab", Pb, Pb, hbb))
    return val, D, H


def _interleave(z: np.ndarray) -> np.ndarray:
    """Complex (m, ...) -> real (2m, ...) as (Re, Im) pairs."""
    out = np.empty((2 * z.shape[0],) + z.shape[1:])
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


# ---------------------------------------------------------------- slow field
def slow_field_complex(ssm: SSMModel, q: np.ndarray, Omega: float, eps: float) -> np.ndarray:
    q = np.asarray(q, dtype=complex)
    G = ssm.slow_poly.eval(q, q.conj()) - 1j * ssm.r_float * Omega * q
    return G + eps * np.where(ssm.forced_modes, ssm.f, 0.0)


def _check_state(ssm: SSMModel, s: SlowState) -> None:
    if s.m != ssm.m:
        raise ValueError(f"state has {s.m} pairs, model has {ssm.m}")
    if s.polar and np.any(s.coords[0::2] < RHO_MIN):
        raise ValueError(f"polar coordinates are singular for rho < {RHO_MIN}; use Cartesian coordinates")


def slow_vector_field(ssm: SSMModel, s: SlowState) -> np.ndarray:
    """Right-hand side of the slow dynamics in the coordinates of ``s``."""
    _check_state(ssm, s)
    q = s.q
    G = slow_field_complex(ssm, q, s.Omega, s.eps)
    if not s.polar:
        return _interleave(G)
    theta = s.coords[1::2]
    E = np.exp(-1j * theta) * G
    out = np.empty(2 * ssm.m)
    out[0::2] = E.real
    out[1::2] = E.imag / s.coords[0::2]
    return out


def slow_jacobian(ssm: SSMModel, s: SlowState) -> np.ndarray:
    """Analytic Jacobian of :func:`slow_vector_field` in the coordinates of ``s``."""
    _check_state(ssm, s)
    m = ssm.m
    q = s.q
    _, D, _ = real_partials(ssm.slow_poly, q, polar=s.polar)
    Pq, _ = _operators(q, s.polar)
    D = D - 1j * (ssm.r_float * s.Omega)[:, None] * Pq
    if not s.polar:
        return _interleave(D)
    rho, theta = s.coords[0::2], s.coords[1::2]
    G = slow_field_complex(ssm, q, s.Omega, s.eps)
    rot = np.exp(-1j * theta)[:, None]
    dE = rot * D
    idx = np.arange(m)
    dE[idx, 2 * idx + 1] += -1j * rot[:, 0] * G
    J = np.empty((2 * m, 2 * m))
    J[0::2] = dE.real
    J[1::2] = dE.imag / rho[:, None]
    E = rot[:, 0] * G
    J[2 * idx + 1, 2 * idx] -= E.imag / rho**2
    return J


def slow_derivatives(ssm: SSMModel, y: np.ndarray, Omega: float, eps: float, second: bool = False):
    """Cartesian field ``h`` with derivatives over ``v = (y, Omega, eps)``.

    Returns ``(h, Dh, Hh)``: shapes (2m,), (2m, 2m+2), (2m, 2m+2, 2m+2).
    """
    m = ssm.m
    q = np.asarray(y[0::2]) + 1j * np.asarray(y[1::2])
    val, D, H = real_partials(ssm.slow_poly, q, second=second)
    rOm = ssm.r_float * Omega
    forced = np.where(ssm.forced_modes, ssm.f, 0.0)
    G = val - 1j * rOm * q + eps * forced
    nv = 2 * m + 2
    Dc = np.zeros((m, nv), complex)
    Dc[:, : 2 * m] = D
    idx = np.arange(m)
    Dc[idx, 2 * idx] += -1j * rOm
    Dc[idx, 2 * idx + 1] += rOm
    Dc[:, 2 * m] = -1j * ssm.r_float * q
    Dc[:, 2 * m + 1] = forced
    Hh = None
    if second:
        Hc = np.zeros((m, nv, nv), complex)
        Hc[:, : 2 * m, : 2 * m] = H
        Hc[idx, 2 * idx, 2 * m] = Hc[idx, 2 * m, 2 * idx] = -1j * ssm.r_float
        Hc[idx, 2 * idx + 1, 2 * m] = Hc[idx, 2 * m, 2 * idx + 1] = ssm.r_float
        Hh = _interleave(Hc)
    return _interleave(G), _interleave(Dc), Hh


# --------------------------------------------------------------- fixed points
def linear_guess(ssm: SSMModel, Omega: float, eps: float) -> SlowState:
    """Fixed point of the linear part of the slow field."""
    denom = ssm.lambda_E - 1j * ssm.r_float * Omega
    q = -eps * np.where(ssm.forced_modes, ssm.f, 0.0) / denom
    return SlowState.from_q(q, Omega, eps)


def classify(ssm: SSMModel, s: SlowState, tol: float = 1e-10) -> tuple[np.ndarray, bool, bool]:
    eig = np.linalg.eigvals(slow_jacobian(ssm, s.to_cartesian()))
    scale = max(np.abs(eig).max(), 1e-300)
    hyperbolic = bool(np.all(np.abs(eig.real) > tol * scale))
    return eig, bool(np.all(eig.real < 0)), hyperbolic


def find_fixed_point(ssm: SSMModel, Omega: float, eps: float, initial: SlowState | None = None,
                     tol: float = 1e-10, max_iter: int = 20) -> FixedPointInfo:
    """Newton iteration (Cartesian) with backtracking on residual increase."""
    polar = initial.polar if initial is not None else False
    s0 = linear_guess(ssm, Omega, eps) if initial is None else initial.to_cartesian()
    y = s0.coords.copy()

    def field(yv):
        return slow_vector_field(ssm, SlowState(yv, Omega, eps))

    h = field(y)
    res = np.linalg.norm(h)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        J = slow_jacobian(ssm, SlowState(y, Omega, eps))
        try:
            step = np.linalg.solve(J, -h)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular slow Jacobian at iteration {it}") from exc
        alpha = 1.0
        for _ in range(12):
            y_new = y + alpha * step
            h_new = field(y_new)
            if np.linalg.norm(h_new) < res or alpha < 1e-3:
                break
            alpha *= 0.5
        y, h = y_new, h_new
        res = np.linalg.norm(h)
        if np.linalg.norm(alpha * step) <= 1e-15 * (1 + np.linalg.norm(y)) and res <= 1e3 * tol:
            break
    if not np.isfinite(res) or res > 1e3 * tol:
        raise ConvergenceError(f"Newton did not converge after {it} iterations; last residual {res:.3e}")
    state = SlowState(y, Omega, eps)
    eig, stable, hyper = classify(ssm, state)
    if polar and np.all(np.abs(state.q) >= RHO_MIN):
        state = state.to_polar()
    return FixedPointInfo(state, eig, stable, hyper, float(res), it)


# -------------------------------------------------------------------- lifting
def lift_to_full(ssm: SSMModel, s: SlowState, t, mode: str = "TI",
                 correction: NonAutoCorrection | None = None, fos=None) -> np.ndarray:
    """Full-state response ``z(t)`` for the periodic orbit of fixed point ``s``.

    ``t`` may be a scalar or an array; the result has shape ``t.shape + (N,)``.
    TV mode adds ``eps (x0 e^{i Omega t} + c.c.)``; the correction is computed
    from ``fos`` when not supplied.
    """
    mode = mode.upper()
    if mode not in ("TI", "TV"):
        raise ValueError("mode must be 'TI' or 'TV'")
    t = np.asarray(t, dtype=float)
    q = s.q[None, :] * np.exp(1j * np.multiply.outer(t.ravel(), ssm.r_float * s.Omega))
    z = ssm.W.eval(q, q.conj()).real
    if mode == "TV" and s.eps != 0:
        if correction is None:
            if fos is None:
                raise ValueError("TV lift needs a NonAutoCorrection (or the first-order system)")
            correction = compute_nonautonomous_correction(fos, ssm, s.Omega, derivatives=False)
        elif not np.isclose(correction.Omega, s.Omega, rtol=1e-14, atol=0):
            raise ValueError("correction was computed at a different Omega")
        z = z + s.eps * 2.0 * np.real(np.multiply.outer(np.exp(1j * s.Omega * t.ravel()), correction.x0))
    return z.reshape(t.shape + (ssm.N,))


def export_trajectory_csv(path, t: np.ndarray, z: np.ndarray) -> None:
    header = "t," + ",".join(f"z{i}" for i in range(z.shape[-1]))
    np.savetxt(path, np.column_stack([t, z]), delimiter=",", header=header, comments="")


# ------------------------------------------------------------------- ROM files
def _cvec(arr) -> list:
    arr = np.asarray(arr, dtype=complex)
    return [arr.real.tolist(), arr.imag.tolist()]


def _from_cvec(obj, name: str) -> np.ndarray:
    try:
        re, im = obj
        return np.asarray(re, float) + 1j * np.asarray(im, float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: expected [real parts, imaginary parts]") from exc


def save_rom(ssm: SSMModel, path) -> None:
    data = {
        "m": ssm.m, "N": ssm.N, "order": ssm.order,
        "r": [str(x) for x in ssm.r],
        "lambda_E": _cvec(ssm.lambda_E), "f": _cvec(ssm.f),
        "W_terms": ssm.W.to_records(), "R_terms": ssm.R.to_records(),
    }
    if ssm.V_E is not None:
        data["V_E"] = _cvec(ssm.V_E)
        data["U_E"] = _cvec(ssm.U_E)
    Path(path).write_text(json.dumps(data))


def load_rom(path) -> SSMModel:
    """Read and validate a ROM file (schema, conjugate symmetry, resonance)."""
    data = json.loads(Path(path).read_text())
    for key in ("m", "N", "order", "r", "lambda_E", "f", "W_terms", "R_terms"):
        if key not in data:
            raise ValueError(f"ROM file missing field {key!r}")
    m, N = int(data["m"]), int(data["N"])
    lam = _from_cvec(data["lambda_E"], "lambda_E").reshape(-1)
    f = _from_cvec(data["f"], "f").reshape(-1)
    if lam.size != m or f.size != m:
        raise ValueError("lambda_E and f must have m entries")
    try:
        r = tuple(Fraction(str(x)) for x in data["r"])
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"r: {exc}") from exc
    if len(r) != m:
        raise ValueError("r must have m entries")
    try:
        W = MultiIndexPoly.from_records(data["W_terms"], m, N)
    except ValueError as exc:
        raise ValueError(f"W_terms: {exc}") from exc
    try:
        R = MultiIndexPoly.from_records(data["R_terms"], m, 2 * m)
    except ValueError as exc:
        raise ValueError(f"R_terms: {exc}") from exc
    V = _from_cvec(data["V_E"], "V_E").reshape(N, m) if "V_E" in data else None
    U = _from_cvec(data["U_E"], "U_E").reshape(N, m) if "U_E" in data else None
    ssm = SSMModel(m=m, N=N, order=int(data["order"]), lambda_E=lam, r=r, W=W, R=R, f=f, V_E=V, U_E=U)
    check_reality(W, R)
    ssm.validate()
    return ssm


def with_forcing(ssm: SSMModel, f) -> SSMModel:
    """Copy of ``ssm`` with a different modal forcing vector."""
    return replace(ssm, f=np.asarray(f, dtype=complex))
