"""Full-system periodic orbits for validating reduced-order predictions.

Periodic responses of ``B z' = A z + F(z) + eps (Fa e^{i Omega t} + c.c.)``
are computed by Gauss collocation on a uniform mesh of the normalized period
``tau = t / T``.  The forcing fixes the phase, so the discretized boundary
value problem is square and needs no phase condition.  A Newmark shooting
solver on the second-order form is provided for cross-checks.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre

from .amplitude import AmplitudeSpec
from .continuation import ContinuationError, StepControl, ZeroProblem, continue_1d
from .mech import FirstOrderSystem, MechanicalSystem

log = logging.getLogger(__name__)


class CollocationError(RuntimeError):
    """Newton iteration on the collocation system failed."""


# ------------------------------------------------------------------ analytic
def linear_frs_analytic(zeta: float, Omega, eps):
    """Response amplitude ``eps / sqrt((1 - Omega^2)^2 + 4 zeta^2 Omega^2)`` of
    ``x'' + 2 zeta x' + x = eps cos(Omega t)``."""
    if not 0 < zeta <= 1 / math.sqrt(2):
        raise ValueError("zeta must lie in (0, 1/sqrt(2)]")
    Omega = np.asarray(Omega, float)
    return np.asarray(eps, float) / np.sqrt((1 - Omega**2) ** 2 + 4 * zeta**2 * Omega**2)


def linear_ridge_frequency(zeta: float) -> float:
    """Frequency of the amplitude maximum, ``sqrt(1 - 2 zeta^2)``."""
    if not 0 < zeta <= 1 / math.sqrt(2):
        raise ValueError("zeta must lie in (0, 1/sqrt(2)]")
    return math.sqrt(1 - 2 * zeta**2)


# --------------------------------------------------------------- the scheme
@dataclass(frozen=True)
class CollocationScheme:
    """Lagrange basis on equidistant base points with Gauss collocation nodes."""

    degree: int = 4
    intervals: int = 50

    def __post_init__(self):
        if self.degree < 1 or self.intervals < 1:
            raise ValueError("degree and intervals must be positive")

    @property
    def base(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.degree + 1)

    @property
    def nodes(self) -> np.ndarray:
        return 0.5 * (legendre.leggauss(self.degree)[0] + 1.0)

    def basis(self, sigma) -> tuple[np.ndarray, np.ndarray]:
        """Values and derivatives of the Lagrange polynomials at ``sigma``; shape (len, degree+1)."""
        sigma = np.atleast_1d(np.asarray(sigma, float))
        xs = self.base
        n = xs.size
        L = np.ones((sigma.size, n))
        dL = np.zeros((sigma.size, n))
        for j in range(n):
            others = [k for k in range(n) if k != j]
            denom = np.prod([xs[j] - xs[k] for k in others])
            for k in others:
                L[:, j] *= sigma - xs[k]
            for k in others:
                term = np.ones(sigma.size)
                for l in others:
                    if l != k:
                        term *= sigma - xs[l]
                dL[:, j] += term
            L[:, j] /= denom
            dL[:, j] /= denom
        return L, dL

    @property
    def n_nodes(self) -> int:
        """Distinct mesh nodes over one period (the end node equals the first)."""
        return self.degree * self.intervals

    def times(self) -> np.ndarray:
        """Normalized times of the mesh nodes in [0, 1)."""
        return np.arange(self.n_nodes) / self.n_nodes

    def node_index(self) -> np.ndarray:
        """(intervals, degree+1) indices of the nodes of each interval (periodic wrap)."""
        i = np.arange(self.intervals)[:, None] * self.degree + np.arange(self.degree + 1)[None, :]
        return i % self.n_nodes


# ------------------------------------------------------------------- orbits
@dataclass
class CollocationOrbit:
    """Periodic orbit on a collocation mesh with Floquet data."""

    z: np.ndarray
    Omega: float
    eps: float
    scheme: CollocationScheme
    multipliers: np.ndarray | None = None
    defect: float = 0.0
    iterations: int = 0

    @property
    def period(self) -> float:
        return 2 * np.pi / self.Omega

    @property
    def t(self) -> np.ndarray:
        return self.scheme.times() * self.period

    @property
    def stable(self) -> bool:
        if self.multipliers is None:
            raise ValueError("Floquet multipliers were not computed")
        return bool(np.abs(self.multipliers).max() < 1.0)

    def sample(self, per_interval: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Dense samples ``(t, z)`` of the piecewise polynomial over one period."""
        sch = self.scheme
        sig = np.linspace(0, 1, per_interval, endpoint=False)
        L, _ = sch.basis(sig)
        Zi = self.z[sch.node_index()]  # (intervals, d+1, N)
        Z = np.einsum("sj,ijn->isn", L, Zi).reshape(-1, self.z.shape[1])
        tau = (np.arange(sch.intervals)[:, None] + sig[None, :]).ravel() / sch.intervals
        return tau * self.period, Z

    def amplitude(self, spec: AmplitudeSpec) -> float:
        """RMS-type L2 amplitude (time average) or the maximum of a coordinate."""
        sch = self.scheme
        Zi = self.z[sch.node_index()]
        if spec.kind == "L2":
            g, w = legendre.leggauss(sch.degree + 2)
            sig = 0.5 * (g + 1)
            L, _ = sch.basis(sig)
            Zq = np.einsum("sj,ijn->isn", L, Zi)[..., list(spec.indices)]
            quad = np.einsum("isa,ab,isb->is", Zq, spec.Q, Zq)
            return float(np.sqrt(max((quad * (0.5 * w)[None, :]).sum() / sch.intervals, 0.0)))
        j = spec.indices[0]
        t, Z = self.sample(32)
        k = int(np.argmax(Z[:, j]))
        # refine with a parabola through the neighbours
        n = Z.shape[0]
        ym, y0, yp = Z[(k - 1) % n, j], Z[k, j], Z[(k + 1) % n, j]
        denom = ym - 2 * y0 + yp
        return float(y0 - 0.125 * (yp - ym) ** 2 / denom) if denom < 0 else float(y0)

    def to_csv(self, path) -> None:
        t, Z = self.sample(8)
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"z{i}" for i in range(Z.shape[1])])
            for ti, zi in zip(t, Z):
                wr.writerow([repr(float(ti))] + [repr(float(v)) for v in zi])


class CollocationProblem:
    """Residual and sparse Jacobian of the collocation equations.

    Unknowns are the node states ``z`` (flattened) and optionally ``Omega``.
    """

    def __init__(self, fos: FirstOrderSystem, eps: float, scheme: CollocationScheme | None = None):
        self.fos = fos
        self.eps = float(eps)
        self.scheme = scheme or CollocationScheme()
        sch = self.scheme
        self.N = fos.N
        self.L, self.dL = sch.basis(sch.nodes)  # (d, d+1)
        self.idx = sch.node_index()
        tau = (np.arange(sch.intervals)[:, None] + sch.nodes[None, :]) / sch.intervals  # (n_int, d)
        self.forcing = 2.0 * np.real(np.exp(2j * np.pi * tau)[..., None] * fos.Fa[None, None, :])
        self.h = 1.0 / sch.intervals
        self._pattern = None

    @property
    def n_z(self) -> int:
        return self.scheme.n_nodes * self.N

    def _colloc_states(self, Z):
        Zi = Z[self.idx]  # (n_int, d+1, N)
        Zc = np.einsum("cj,ijn->icn", self.L, Zi)
        dZc = np.einsum("cj,ijn->icn", self.dL, Zi) / self.h
        return Zi, Zc, dZc

    def rhs(self, Zc):
        fos = self.fos
        return Zc @ fos.A.T + fos.nonlinear_force(Zc) + self.eps * self.forcing

    def residual(self, z, Omega) -> np.ndarray:
        Z = z.reshape(-1, self.N)
        _, Zc, dZc = self._colloc_states(Z)
        T = 2 * np.pi / Omega
        R = dZc @ self.fos.B.T - T * self.rhs(Zc)
        return R.ravel()

    def jacobian(self, z, Omega, with_omega=False):
        sch = self.scheme
        N = self.N
        d = sch.degree
        Z = z.reshape(-1, N)
        _, Zc, dZc = self._colloc_states(Z)
        T = 2 * np.pi / Omega
        Jf = self.fos.A[None, None] + self.fos.nonlinear_jacobian(Zc)  # (n_int, d, N, N)
        B = self.fos.B
        # block (i, c, j) = B dL[c,j]/h - T Jf[i,c] L[c,j]
        blocks = (B[None, None, None] * (self.dL / self.h)[None, :, :, None, None]
                  - T * Jf[:, :, None] * self.L[None, :, :, None, None])  # (n_int, d, d+1, N, N)
        data = blocks.reshape(-1)
        if not with_omega:
            order, indices, indptr = self._csr_pattern(False)
            return sp.csr_matrix((data[order], indices, indptr), shape=(self.n_z, self.n_z))
        dOm = (T / Omega) * self.rhs(Zc).ravel()
        order, indices, indptr = self._csr_pattern(True)
        return sp.csr_matrix((np.r_[data, dOm][order], indices, indptr), shape=(self.n_z, self.n_z + 1))

    def _csr_pattern(self, with_omega):
        """Cached CSR layout of the block entries (the pattern never changes)."""
        if self._pattern is None:
            sch, N, d = self.scheme, self.N, self.scheme.degree
            n_int = sch.intervals
            row_blk = np.arange(n_int)[:, None] * d + np.arange(d)[None, :]
            shape = (n_int, d, d + 1, N, N)
            rr = np.broadcast_to((row_blk[:, :, None, None, None] * N
                                  + np.arange(N)[None, None, None, :, None]), shape).ravel()
            cc = np.broadcast_to((self.idx[:, None, :, None, None] * N
                                  + np.arange(N)[None, None, None, None, :]), shape).ravel()
            self._pattern = {}
            for flag in (False, True):
                r, c = rr, cc
                if flag:
                    r = np.r_[rr, np.arange(self.n_z)]
                    c = np.r_[cc, np.full(self.n_z, self.n_z)]
                order = np.lexsort((c, r))
                indptr = np.r_[0, np.cumsum(np.bincount(r, minlength=self.n_z))]
                self._pattern[flag] = (order, c[order], indptr)
        return self._pattern[with_omega]

    def floquet(self, z, Omega) -> np.ndarray:
        """Floquet multipliers by condensing each interval onto its end points."""
        sch = self.scheme
        N = self.N
        d = sch.degree
        Z = z.reshape(-1, N)
        _, Zc, _ = self._colloc_states(Z)
        T = 2 * np.pi / Omega
        Jf = self.fos.A[None, None] + self.fos.nonlinear_jacobian(Zc)
        B = self.fos.B
        Mono = np.eye(N)
        for i in range(sch.intervals):
            blk = np.zeros((d * N, (d + 1) * N))
            for c in range(d):
                for j in range(d + 1):
                    blk[c * N:(c + 1) * N, j * N:(j + 1) * N] = B * self.dL[c, j] / self.h - T * Jf[i, c] * self.L[c, j]
            start, rest = blk[:, :N], blk[:, N:]
            Phi = -np.linalg.solve(rest, start)[-N:]
            Mono = Phi @ Mono
        return np.linalg.eigvals(Mono)


def _initial_guess(fos: FirstOrderSystem, Omega: float, eps: float, scheme: CollocationScheme) -> np.ndarray:
    """Periodic response of the linearization (exact for linear systems)."""
    zhat = np.linalg.solve(1j * Omega * fos.B - fos.A, eps * fos.Fa)
    tau = scheme.times()
    return 2.0 * np.real(np.exp(2j * np.pi * tau)[:, None] * zhat[None, :])


def _linear_peak(fos: FirstOrderSystem, eps: float, Omega_bounds, samples: int = 33) -> float:
    return max(2 * np.abs(np.linalg.solve(1j * W * fos.B - fos.A, eps * fos.Fa)).max()
               for W in np.linspace(*Omega_bounds, samples))


def collocation_periodic_orbit(fos: FirstOrderSystem, Omega: float, eps: float, init=None,
                               scheme: CollocationScheme | None = None, tol: float = 1e-10, max_iter: int = 40,
                               floquet: bool = True) -> CollocationOrbit:
    """Newton solve of the collocation equations at fixed ``(Omega, eps)``.

    ``init`` may be node states of shape (n_nodes, N), a callable ``t -> z``
    (for instance a lifted reduced-order orbit), or ``None`` for the linear
    response.
    """
    scheme = scheme or CollocationScheme()
    prob = CollocationProblem(fos, eps, scheme)
    if init is None:
        Z = _initial_guess(fos, Omega, eps, scheme)
    elif callable(init):
        Z = np.asarray(init(scheme.times() * 2 * np.pi / Omega), float)
    else:
        Z = np.asarray(init, float)
    z = Z.ravel().copy()
    if eps == 0 and init is None:
        z[:] = 0.0
    scale = max(np.abs(z).max(), 1e-300)
    res = prob.residual(z, Omega)
    norm = np.linalg.norm(res, np.inf)
    it = 0
    while it < max_iter:
        J = prob.jacobian(z, Omega)
        try:
            dz = spla.splu(J.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(-res)
        except RuntimeError as exc:
            raise CollocationError(f"singular collocation Jacobian at iteration {it}") from exc
        alpha = 1.0
        for _ in range(10):
            z_new = z + alpha * dz
            res_new = prob.residual(z_new, Omega)
            n_new = np.linalg.norm(res_new, np.inf)
            if n_new < norm or alpha < 1e-3:
                break
            alpha *= 0.5
        z, res, norm = z_new, res_new, n_new
        it += 1
        if np.linalg.norm(alpha * dz, np.inf) <= tol * max(scale, np.abs(z).max()) and norm <= 1e3 * tol * max(
                1.0, scale):
            break
    if not np.isfinite(norm) or np.linalg.norm(alpha * dz, np.inf) > 1e3 * tol * max(scale, np.abs(z).max(), 1e-12):
        raise CollocationError(f"collocation Newton did not converge (defect {norm:.3e} after {it} iterations); "
                               "try a homotopy from smaller eps")
    orbit = CollocationOrbit(z.reshape(-1, fos.N), Omega, eps, scheme, defect=float(norm), iterations=it)
    if floquet:
        orbit.multipliers = prob.floquet(z, Omega)
    return orbit


# --------------------------------------------------------------- FRC sweeps
@dataclass
class FullFRC:
    """Forced response curve of the full system."""

    eps: float
    Omega: np.ndarray
    amplitude: np.ndarray
    stable: np.ndarray
    events: list
    orbits: list = field(default_factory=list, repr=False)
    branch: object = None

    def peak(self) -> tuple[float, float]:
        k = int(np.argmax(self.amplitude))
        return float(self.Omega[k]), float(self.amplitude[k])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["Omega", "amplitude", "stable"])
            for o, a, s in zip(self.Omega, self.amplitude, self.stable):
                wr.writerow([repr(float(o)), repr(float(a)), int(s)])


def frc_zero_problem(fos: FirstOrderSystem, eps: float, spec: AmplitudeSpec, scheme: CollocationScheme,
                     z_scale: float, Omega_scale: float, stability_test: bool = True) -> ZeroProblem:
    prob = CollocationProblem(fos, eps, scheme)
    nz = prob.n_z

    def residual(u):
        return prob.residual(u[:nz], u[nz])

    def jacobian(u):
        return prob.jacobian(u[:nz], u[nz], with_omega=True)

    def orbit(u):
        return CollocationOrbit(u[:nz].reshape(-1, fos.N), u[nz], eps, scheme)

    monitors = {"Omega": lambda u: u[nz], spec.name: lambda u: orbit(u).amplitude(spec)}
    grads = {"Omega": lambda u: np.eye(1, nz + 1, nz)[0]}
    tests = {}
    if stability_test:
        tests["SN"] = lambda u: float(np.abs(prob.floquet(u[:nz], u[nz])).max() - 1.0)
    zp = ZeroProblem(residual, jacobian, nz + 1, monitors=monitors, monitor_grads=grads, tests=tests,
                     scale=np.r_[np.full(nz, z_scale), Omega_scale])
    zp.collocation = prob
    return zp


def frc_full(fos: FirstOrderSystem, eps: float, Omega_bounds, spec: AmplitudeSpec,
             scheme: CollocationScheme | None = None, ctrl: StepControl | None = None, init=None,
             stability: bool = True, fold_events: bool = True, state_scale: float | None = None) -> FullFRC:
    """Continue collocated periodic orbits across ``Omega_bounds`` at fixed ``eps``.

    Amplitude extrema appear as ``FOLD`` events of the amplitude monitor;
    stability changes (a Floquet multiplier leaving the unit circle) as
    ``SN`` events.  ``state_scale`` is the expected peak magnitude of the
    state; it defaults to the largest linear response over the window.
    """
    scheme = scheme or CollocationScheme()
    lo, hi = Omega_bounds
    orbit0 = collocation_periodic_orbit(fos, lo, eps, init=init, scheme=scheme, floquet=False)
    # RMS-type scaling so the step length does not grow with the mesh size
    base = state_scale if state_scale is not None else _linear_peak(fos, eps, Omega_bounds)
    z_scale = max(base, 1e-12) * math.sqrt(scheme.n_nodes)
    zp = frc_zero_problem(fos, eps, spec, scheme, z_scale, hi - lo, stability)
    ctrl = ctrl or StepControl(h0=0.02, h_max=0.05, max_steps=2000, tol=1e-9, step_tol=1e-11)
    u0 = np.r_[orbit0.z.ravel(), lo]
    direction = np.zeros(zp.n_u)
    direction[-1] = 1.0
    br = continue_1d(zp, u0, direction=direction, bounds={"Omega": (lo, hi)}, ctrl=ctrl,
                     fold_monitors=[spec.name] if fold_events else [], correct_start=False)
    nz = zp.n_u - 1
    prob = zp.collocation
    orbits, amps, stab = [], [], []
    for u in br.points:
        orb = CollocationOrbit(u[:nz].reshape(-1, fos.N), u[nz], eps, scheme)
        if stability:
            orb.multipliers = prob.floquet(u[:nz], u[nz])
            stab.append(orb.stable)
        else:
            stab.append(True)
        orbits.append(orb)
        amps.append(orb.amplitude(spec))
    return FullFRC(eps, br.u[:, -1], np.array(amps), np.array(stab, bool), br.events, orbits, br)


def ridge_by_collocation(fos: FirstOrderSystem, spec: AmplitudeSpec, eps_values, Omega_bounds,
                         scheme: CollocationScheme | None = None) -> list:
    """Amplitude extrema of full-system forced response curves at several ``eps``.

    Returns dicts ``{eps, Omega, amplitude}`` for every amplitude fold found.
    This is the brute-force counterpart of the reduced-order extraction.
    """
    out = []
    for eps in eps_values:
        frc = frc_full(fos, eps, Omega_bounds, spec, scheme=scheme, stability=False)
        nz = frc.branch.zp.n_u - 1
        for ev in frc.events:
            if ev.kind == "FOLD":
                orb = CollocationOrbit(ev.u[:nz].reshape(-1, fos.N), ev.u[nz], eps, frc.orbits[0].scheme)
                out.append({"eps": float(eps), "Omega": float(ev.u[nz]), "amplitude": orb.amplitude(spec)})
    return out


def compare_with_rom(ssm, fos: FirstOrderSystem, frc, spec: AmplitudeSpec, samples: int = 20, mode: str = "TV",
                     scheme: CollocationScheme | None = None, sn_margin: float = 1e-3) -> list[dict]:
    """Check reduced-order FRC points against collocated full-system orbits.

    Points are spread evenly in arclength along ``frc`` (a reduced-order
    :class:`~ssmfrs.frs.FRC`).  Each is lifted to the full phase space to
    start the collocation solve, so the full orbit lies on the same branch.
    Points closer than ``sn_margin`` (relative to the frequency window) to a
    saddle-node are skipped, since stability is undefined there.
    """
    from .rom import SlowState, lift_to_full

    scheme = scheme or CollocationScheme()
    width = float(np.ptp(frc.Omega)) or 1.0
    sn = np.array([ev.u[-1] for ev in frc.events if ev.kind == "SN"])
    ok = np.ones(frc.Omega.size, bool)
    if sn.size:
        ok = np.abs(frc.Omega[:, None] - sn[None, :]).min(axis=1) > sn_margin * width
    pts = np.c_[frc.Omega / width, frc.amplitude / max(np.abs(frc.amplitude).max(), 1e-300)]
    arc = np.r_[0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
    cand = np.flatnonzero(ok)
    targets = np.linspace(arc[cand[0]], arc[cand[-1]], samples)
    picks = []
    for a in targets:
        k = cand[np.argmin(np.abs(arc[cand] - a))]
        if k in picks:
            k = next((c for c in cand[np.argsort(np.abs(arc[cand] - a))] if c not in picks), k)
        picks.append(int(k))
    out = []
    for k in picks:
        state = SlowState(frc.coords[k], float(frc.Omega[k]), frc.eps)
        orbit = collocation_periodic_orbit(
            fos, state.Omega, frc.eps, scheme=scheme,
            init=lambda t, st=state: lift_to_full(ssm, st, t, mode=mode, fos=fos))
        out.append({"Omega": state.Omega, "rom_amplitude": float(frc.amplitude[k]),
                    "full_amplitude": orbit.amplitude(spec), "rom_stable": bool(frc.stable[k]),
                    "full_stable": orbit.stable, "max_multiplier": float(np.abs(orbit.multipliers).max())})
    return out


# ---------------------------------------------------------------- shooting
def _nl_force(mech: MechanicalSystem, x, v):
    if mech.nonlinearity is None or not len(mech.nonlinearity):
        return np.zeros(mech.n), np.zeros((mech.n, 2 * mech.n))
    w = np.r_[x, v]
    val = mech.nonlinearity.eval(w, w).real
    dq, _ = mech.nonlinearity.partials(w, w)
    return val, dq.real


def newmark_period(mech: MechanicalSystem, Omega: float, eps: float, x0, v0, steps: int = 1000,
                   gamma: float = 0.5, beta: float = 0.25, newton_tol: float = 1e-12):
    """Integrate one forcing period with the Newmark scheme; returns ``(x_T, v_T)``."""
    M, C, K, fext = mech.M, mech.C, mech.K, mech.fext
    T = 2 * np.pi / Omega
    h = T / steps
    x, v = np.asarray(x0, float).copy(), np.asarray(v0, float).copy()
    fnl, _ = _nl_force(mech, x, v)
    a = np.linalg.solve(M, eps * fext - C @ v - K @ x - fnl)
    n = mech.n
    for k in range(steps):
        t1 = (k + 1) * h
        xp = x + h * v + h * h * (0.5 - beta) * a
        vp = v + h * (1 - gamma) * a
        a1 = a.copy()
        for _ in range(30):
            x1 = xp + beta * h * h * a1
            v1 = vp + gamma * h * a1
            fnl, dnl = _nl_force(mech, x1, v1)
            r = M @ a1 + C @ v1 + K @ x1 + fnl - eps * fext * math.cos(Omega * t1)
            Keff = M + gamma * h * (C + dnl[:, n:]) + beta * h * h * (K + dnl[:, :n])
            da = np.linalg.solve(Keff, -r)
            a1 += da
            if np.linalg.norm(da) <= newton_tol * max(1.0, np.linalg.norm(a1)):
                break
        x, v, a = xp + beta * h * h * a1, vp + gamma * h * a1, a1
    return x, v


def shooting_periodic_orbit(mech: MechanicalSystem, Omega: float, eps: float, x0=None, v0=None,
                            steps: int = 1000, tol: float = 1e-10, max_iter: int = 30):
    """Periodic orbit by single shooting on Newmark maps (finite-difference Jacobian).

    Returns ``(x0, v0, iterations)`` of the periodic initial state.
    """
    n = mech.n
    if x0 is None:
        fos_like = np.linalg.solve(-Omega**2 * mech.M + 1j * Omega * mech.C + mech.K, eps * mech.fext)
        x0, v0 = fos_like.real, -Omega * fos_like.imag
    s = np.r_[np.asarray(x0, float), np.asarray(v0, float)]

    def defect(state):
        xT, vT = newmark_period(mech, Omega, eps, state[:n], state[n:], steps)
        return np.r_[xT, vT] - state

    for it in range(1, max_iter + 1):
        r = defect(s)
        if np.linalg.norm(r) <= tol * max(1.0, np.linalg.norm(s)):
            return s[:n], s[n:], it
        J = np.zeros((2 * n, 2 * n))
        for k in range(2 * n):
            dk = 1e-7 * max(1.0, abs(s[k]))
            e = np.zeros(2 * n)
            e[k] = dk
            J[:, k] = (defect(s + e) - r) / dk
        s = s + np.linalg.solve(J, -r)
    raise CollocationError("shooting did not converge")
