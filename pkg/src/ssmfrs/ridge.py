"""Ridges and trenches of forced response surfaces by successive continuation.

A ridge (trench) is a curve of local maxima (minima) of the response
amplitude along the forced response curves at fixed forcing amplitude.  The
first-order necessary conditions of the constrained stationarity problem are
augmented with Lagrange multipliers; because the adjoint equations are linear
and homogeneous in the multipliers, every fixed point with zero multipliers
solves them, and amplitude extrema along a forced response curve show up as
branch points from which the multipliers can be grown to ``eta_A = 1``.

Unknowns (L2 functional)::

    u = (y[2m], Omega, eps, eta_A, eta_Omega, eta_eps, lam[2m])

and for a sampled coordinate (OPT functional) the time ``t`` follows ``eps``
and ``eta_t`` follows ``eta_eps``.
"""
from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amplitude import AmplitudeSpec, amplitude_jet
from .continuation import (Branch, BranchingError, ContinuationError, StepControl, ZeroProblem, continue_1d,
                           detect_and_switch_branch)
from .frs import _amplitude_scale, solution_components_m1
from .rom import ConvergenceError, SlowState, classify, find_fixed_point, slow_derivatives
from .ssm import SSMModel, compute_nonautonomous_correction

log = logging.getLogger(__name__)


# --------------------------------------------------------------------- layout
@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the augmented unknown vector."""

    m: int
    with_time: bool

    @property
    def names(self) -> list:
        m = self.m
        design = [f"y{i}" for i in range(2 * m)] + ["Omega", "eps"] + (["t"] if self.with_time else [])
        mult = ["eta_A", "eta_Omega", "eta_eps"] + (["eta_t"] if self.with_time else [])
        return design + mult + [f"lam{i}" for i in range(2 * m)]

    @property
    def index(self) -> dict:
        return {n: i for i, n in enumerate(self.names)}

    @property
    def n_design(self) -> int:
        return 2 * self.m + 2 + int(self.with_time)

    @property
    def n_u(self) -> int:
        return len(self.names)

    @property
    def n_eq(self) -> int:
        return 4 * self.m + 2 + int(self.with_time)

    def split(self, u):
        m, nd = self.m, self.n_design
        y = u[: 2 * m]
        Om, eps = u[2 * m], u[2 * m + 1]
        t = u[2 * m + 2] if self.with_time else 0.0
        etas = u[nd: nd + 3 + int(self.with_time)]
        lam = u[nd + 3 + int(self.with_time):]
        return y, Om, eps, t, etas, lam


@dataclass
class AugmentedState:
    """Design variables with multipliers, as a readable view of ``u``."""

    y: np.ndarray
    Omega: float
    eps: float
    t: float
    eta_A: float
    eta_Omega: float
    eta_eps: float
    eta_t: float
    lam: np.ndarray

    @classmethod
    def from_vector(cls, layout: Layout, u) -> AugmentedState:
        y, Om, eps, t, etas, lam = layout.split(np.asarray(u, float))
        eta_t = etas[3] if layout.with_time else 0.0
        return cls(y.copy(), float(Om), float(eps), float(t), float(etas[0]), float(etas[1]), float(etas[2]),
                   float(eta_t), lam.copy())

    def to_vector(self, layout: Layout) -> np.ndarray:
        parts = [self.y, [self.Omega, self.eps]]
        if layout.with_time:
            parts.append([self.t])
        parts.append([self.eta_A, self.eta_Omega, self.eta_eps])
        if layout.with_time:
            parts.append([self.eta_t])
        parts.append(self.lam)
        return np.concatenate([np.asarray(p, float).ravel() for p in parts])


class _Corrections:
    """Forced corrections with Omega-derivatives, cached by Omega."""

    def __init__(self, fos, ssm, size=32):
        self.fos, self.ssm, self.size = fos, ssm, size
        self.store = OrderedDict()

    def __call__(self, Omega):
        key = float(Omega)
        if key not in self.store:
            self.store[key] = compute_nonautonomous_correction(self.fos, self.ssm, key, derivatives=True)
            if len(self.store) > self.size:
                self.store.popitem(last=False)
        return self.store[key]


# ----------------------------------------------------------------- the FONC
@dataclass
class FONC:
    """First-order conditions with their Jacobian; see :func:`build_fonc_L2`."""

    ssm: SSMModel
    spec: AmplitudeSpec
    mode: str
    layout: Layout
    fos: object = None
    _corr: object = None

    def __post_init__(self):
        if self.mode.upper() == "TV":
            if self.fos is None:
                raise ValueError("TV mode needs the first-order system")
            self._corr = _Corrections(self.fos, self.ssm)

    def _state(self, u):
        y, Om, eps, t, _, _ = self.layout.split(u)
        return SlowState(y, Om, eps), t

    def amplitude(self, u, second=False):
        s, t = self._state(u)
        corr = self._corr(s.Omega) if self._corr is not None else None
        return amplitude_jet(self.spec, self.ssm, s, self.mode, corr, t=t, second=second, fos=self.fos)

    def residual(self, u) -> np.ndarray:
        L = self.layout
        m = L.m
        y, Om, eps, t, etas, lam = L.split(u)
        h, Dh, _ = slow_derivatives(self.ssm, y, Om, eps)
        _, dA, _ = self.amplitude(u)
        nd = L.n_design
        # gradients over the design variables (y, Omega, eps[, t])
        gA = dA[:nd]
        gh = np.zeros((2 * m, nd))
        gh[:, : 2 * m + 2] = Dh
        adj = etas[0] * gA + gh.T @ lam
        adj[2 * m] += etas[1]
        adj[2 * m + 1] += etas[2]
        if L.with_time:
            adj[2 * m + 2] += etas[3]
        return np.concatenate([h, adj])

    def jacobian(self, u) -> np.ndarray:
        L = self.layout
        m = L.m
        nd = L.n_design
        y, Om, eps, t, etas, lam = L.split(u)
        _, Dh, Hh = slow_derivatives(self.ssm, y, Om, eps, second=True)
        _, dA, HA = self.amplitude(u, second=True)
        n_et = 3 + int(L.with_time)
        J = np.zeros((L.n_eq, L.n_u))
        J[: 2 * m, : 2 * m + 2] = Dh
        gA = dA[:nd]
        gh = np.zeros((2 * m, nd))
        gh[:, : 2 * m + 2] = Dh
        Hd = etas[0] * HA[:nd, :nd]
        Hd[: 2 * m + 2, : 2 * m + 2] += np.einsum("i,iab->ab", lam, Hh)
        rows = slice(2 * m, 2 * m + nd)
        J[rows, :nd] = Hd
        J[rows, nd] = gA
        J[2 * m + 2 * m, nd + 1] = 1.0
        J[2 * m + 2 * m + 1, nd + 2] = 1.0
        if L.with_time:
            J[2 * m + 2 * m + 2, nd + 3] = 1.0
        J[rows, nd + n_et:] = gh.T
        return J


def _build(ssm, spec, mode, fos, with_time, scale) -> ZeroProblem:
    layout = Layout(ssm.m, with_time)
    fonc = FONC(ssm, spec, mode, layout, fos)
    idx = layout.index
    monitors = {n: (lambda u, k=k: float(u[k])) for n, k in idx.items() if not n.startswith(("y", "lam"))}
    grads = {n: (lambda u, k=k: np.eye(layout.n_u)[k]) for n, k in idx.items() if n in monitors}
    monitors["A"] = lambda u: fonc.amplitude(u)[0]
    lam0 = idx["lam0"]
    monitors["lambda_norm"] = lambda u: float(np.linalg.norm(u[lam0:]))
    zp = ZeroProblem(fonc.residual, fonc.jacobian, layout.n_u, monitors=monitors, monitor_grads=grads,
                     scale=scale, names=layout.names)
    zp.fonc = fonc
    zp.layout = layout
    return zp


def build_fonc_L2(ssm: SSMModel, spec: AmplitudeSpec, mode: str = "TI", fos=None, scale=None) -> ZeroProblem:
    """Augmented first-order conditions for extrema of an L2 amplitude.

    Residual rows: the slow field ``h = 0``; the adjoint conditions
    ``eta_A dA/dy + h_y^T lam = 0``, ``eta_A dA/dOmega + eta_Omega + h_Omega^T lam = 0``
    and ``eta_A dA/deps + eta_eps + h_eps^T lam = 0``.  The returned problem has
    three free directions; fix some with :func:`with_fixed`.
    """
    if spec.kind != "L2":
        raise ValueError("build_fonc_L2 needs an L2 amplitude spec")
    spec.check(ssm.N)
    return _build(ssm, spec, mode, fos, False, scale)


def build_fonc_opt(ssm: SSMModel, spec: AmplitudeSpec, mode: str = "TI", fos=None, scale=None) -> ZeroProblem:
    """As :func:`build_fonc_L2` for a sampled coordinate ``z_opt(t)``.

    Adds the unknown ``t`` and the condition ``eta_A dA/dt + eta_t = 0``;
    four free directions.
    """
    if spec.kind != "OPT":
        raise ValueError("build_fonc_opt needs an OPT amplitude spec")
    spec.check(ssm.N)
    return _build(ssm, spec, mode, fos, True, scale)


def with_fixed(zp: ZeroProblem, fixed: dict) -> ZeroProblem:
    """Append rows ``u[name] - value = 0`` for each entry of ``fixed``."""
    idx = zp.layout.index
    items = [(idx[n], float(v)) for n, v in fixed.items()]
    base_res, base_jac = zp.residual, zp.jacobian
    E = np.zeros((len(items), zp.n_u))
    for r, (k, _) in enumerate(items):
        E[r, k] = 1.0
    vals = np.array([v for _, v in items])
    cols = [k for k, _ in items]

    def residual(u):
        return np.concatenate([base_res(u), np.asarray(u)[cols] - vals])

    def jacobian(u):
        return np.vstack([base_jac(u), E])

    out = ZeroProblem(residual, jacobian, zp.n_u, monitors=dict(zp.monitors), monitor_grads=dict(zp.monitor_grads),
                      tests=dict(zp.tests), scale=zp.scale.copy(), offset=zp.offset.copy(), names=zp.names)
    out.fonc, out.layout, out.fixed = zp.fonc, zp.layout, dict(fixed)
    return out


def with_normalized(zp: ZeroProblem, fixed: dict, u_ref) -> ZeroProblem:
    """Fix ``fixed`` entries and pin the scaled multiplier norm to its value at ``u_ref``.

    Unlike ``eta_A = 1`` this normalization stays regular where the forced
    response curve itself becomes singular: there ``eta_A`` passes through
    zero while the multipliers stay bounded.
    """
    idx = zp.layout.index
    mult = [idx[n] for n in ("eta_A", "eta_eps", "eta_t") if n in idx and n not in fixed]
    mult += list(range(idx["lam0"], zp.n_u))
    mult = np.array(mult)
    w = 1.0 / zp.scale[mult] ** 2
    u_ref = np.asarray(u_ref, float)
    target = float(np.sum(w * u_ref[mult] ** 2))
    base = with_fixed(zp, fixed)
    res0, jac0 = base.residual, base.jacobian

    def residual(u):
        return np.r_[res0(u), np.sum(w * np.asarray(u)[mult] ** 2) / target - 1.0]

    def jacobian(u):
        row = np.zeros(zp.n_u)
        row[mult] = 2 * w * np.asarray(u)[mult] / target
        return np.vstack([jac0(u), row])

    out = ZeroProblem(residual, jacobian, zp.n_u, monitors=dict(zp.monitors), monitor_grads=dict(zp.monitor_grads),
                      tests=dict(zp.tests), scale=zp.scale.copy(), offset=zp.offset.copy(), names=zp.names)
    out.fonc, out.layout, out.fixed = zp.fonc, zp.layout, dict(fixed)
    return out


def normalize_multipliers(layout: Layout, u) -> np.ndarray:
    """Rescale the (homogeneous) multipliers of ``u`` to ``eta_A = 1``."""
    u = np.asarray(u, float).copy()
    nd = layout.n_design
    eta_A = u[nd]
    if eta_A == 0:
        raise ZeroDivisionError("eta_A = 0: multipliers cannot be normalized")
    u[nd:] /= eta_A
    return u


# ------------------------------------------------------------- diagnostics
def adjoint_residual(zp: ZeroProblem, u) -> np.ndarray:
    """Adjoint rows of the augmented residual at ``u``."""
    m = zp.layout.m
    return zp.fonc.residual(np.asarray(u, float))[2 * m:]


def solve_multipliers(zp: ZeroProblem, u, eta_A: float = 1.0, free=("eta_Omega", "eta_eps", "eta_t")) -> np.ndarray:
    """Given design variables, solve the adjoint rows for the multipliers.

    ``eta_A`` is fixed; ``lam`` and the multipliers in ``free`` are unknowns.
    Returns the completed vector.  Solved in the least-squares sense; the
    residual norm is stored in the last entry of the returned tuple.
    """
    L = zp.layout
    idx = L.index
    u = np.asarray(u, float).copy()
    u[idx["eta_A"]] = eta_A
    unknown = [idx[n] for n in free if n in idx] + list(range(idx["lam0"], L.n_u))
    for k in unknown:
        u[k] = 0.0
    base = adjoint_residual(zp, u)
    J = zp.fonc.jacobian(u)[2 * L.m:, unknown]
    sol, *_ = np.linalg.lstsq(J, -base, rcond=None)
    u[unknown] = sol
    return u


def second_derivative_along_frc(zp: ZeroProblem, u) -> float:
    """Second derivative of the amplitude along the forced response curve at ``u``.

    Evaluated as ``v^T (A'' + sum lam_i h_i'') v`` with ``v`` the unit
    tangent of the curve in ``(y, Omega)`` (and ``t`` for sampled
    coordinates) and multipliers normalized to ``eta_A = 1``.  Negative
    values mark maxima (ridges), positive values minima (trenches).
    """
    L = zp.layout
    m = L.m
    u = np.asarray(u, float)
    if abs(u[L.index["eta_A"]] - 1.0) > 1e-6:
        u = solve_multipliers(zp, u)
    y, Om, eps, t, etas, lam = L.split(u)
    _, Dh, Hh = slow_derivatives(zp.fonc.ssm, y, Om, eps, second=True)
    _, dA, HA = zp.fonc.amplitude(u, second=True)
    # tangent in (y, Omega) of h(y, Omega; eps) = 0
    _, _, vh = np.linalg.svd(Dh[:, : 2 * m + 1])
    v = vh[-1]
    sel = list(range(2 * m + 1))
    H = etas[0] * HA[np.ix_(sel, sel)] + np.einsum("i,iab->ab", lam, Hh[:, : 2 * m + 1, : 2 * m + 1])
    if L.with_time:
        # t rides along at its stationary value: eliminate it (A_tt dt + A_tv v = 0)
        it = 2 * m + 2
        Att = HA[it, it]
        cross = HA[it, sel]
        if abs(Att) > 0:
            H = H - np.outer(cross, cross) / Att
    return float(v @ H @ v)


def stationarity_defect(ssm: SSMModel, spec: AmplitudeSpec, point: dict, mode: str = "TI", fos=None,
                        step: float = 1e-6) -> float:
    """Finite-difference ``dA/dOmega`` along the forced response curve through ``point``.

    ``point`` holds ``y, Omega, eps`` (and ``t`` for sampled coordinates,
    which is re-optimized at the perturbed frequencies). Central differences
    at ``step`` and ``step/2`` are Richardson-combined, so the truncation
    error is fourth order; this matters on the steep flanks of lightly
    damped resonances where the third derivative is large.
    """

    def amp(Om):
        fp = find_fixed_point(ssm, Om, point["eps"], SlowState(point["y"], Om, point["eps"]), tol=1e-14)
        s = fp.state
        if spec.kind == "L2":
            return amplitude_jet(spec, ssm, s, mode, fos=fos)[0]
        tt = point["t"]
        for _ in range(30):
            _, g, H = amplitude_jet(spec, ssm, s, mode, t=tt, second=True, fos=fos)
            it = 2 * ssm.m + 2
            dt = -g[it] / H[it, it]
            tt += dt
            if abs(dt) < 1e-15 * max(1.0, abs(tt)):
                break
        return amplitude_jet(spec, ssm, s, mode, t=tt, fos=fos)[0]

    Om0 = point["Omega"]
    d1 = (amp(Om0 + step) - amp(Om0 - step)) / (2 * step)
    h = step / 2
    d2 = (amp(Om0 + h) - amp(Om0 - h)) / (2 * h)
    return float(abs((4 * d2 - d1) / 3))


# ------------------------------------------------------------------ results
@dataclass
class RidgeCurve:
    """A curve of amplitude extrema over the forcing amplitude."""

    Omega: np.ndarray
    eps: np.ndarray
    amplitude: np.ndarray
    y: np.ndarray
    stable: np.ndarray
    eta_eps: np.ndarray
    curvature: np.ndarray
    classification: list
    termination: str
    t: np.ndarray | None = None
    lambda_norm: np.ndarray | None = None
    events: list = field(default_factory=list)
    u: np.ndarray | None = None

    @property
    def kind(self) -> str:
        """Majority classification of the curve."""
        ridge = sum(c == "ridge" for c in self.classification)
        return "ridge" if 2 * ridge >= len(self.classification) else "trench"

    def __len__(self) -> int:
        return int(self.Omega.size)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "Omega", "amplitude", "class", "stable"])
            for k in range(len(self)):
                wr.writerow([repr(float(self.eps[k])), repr(float(self.Omega[k])), repr(float(self.amplitude[k])),
                             self.classification[k], int(self.stable[k])])


def _curve_from_points(zp, U, termination, events=()) -> RidgeCurve:
    L = zp.layout
    m = L.m
    idx = L.index
    amps, stable, curv = [], [], []
    for u in U:
        amps.append(zp.fonc.amplitude(u)[0])
        s = SlowState(u[: 2 * m], u[2 * m], u[2 * m + 1])
        stable.append(classify(zp.fonc.ssm, s)[1])
        curv.append(second_derivative_along_frc(zp, u))
    curv = np.array(curv)
    cls = ["ridge" if c < 0 else "trench" for c in curv]
    return RidgeCurve(
        Omega=U[:, 2 * m], eps=U[:, 2 * m + 1], amplitude=np.array(amps), y=U[:, : 2 * m],
        stable=np.array(stable, bool), eta_eps=U[:, idx["eta_eps"]], curvature=curv, classification=cls,
        termination=termination, t=U[:, idx["t"]] if L.with_time else None,
        lambda_norm=np.linalg.norm(U[:, idx["lam0"]:], axis=1), events=list(events), u=U)


def split_by_class(curve: RidgeCurve) -> list:
    """Split a curve where its ridge/trench classification changes."""
    cls = curve.classification
    cuts = [0] + [k for k in range(1, len(cls)) if cls[k] != cls[k - 1]] + [len(cls)]
    if len(cuts) == 2:
        return [curve]
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        sl = slice(max(a - 1, 0) if a else 0, b)
        sub = RidgeCurve(curve.Omega[sl], curve.eps[sl], curve.amplitude[sl], curve.y[sl], curve.stable[sl],
                         curve.eta_eps[sl], curve.curvature[sl], curve.classification[sl],
                         "merge" if b < len(cls) else curve.termination,
                         None if curve.t is None else curve.t[sl],
                         None if curve.lambda_norm is None else curve.lambda_norm[sl], curve.events,
                         None if curve.u is None else curve.u[sl])
        if a > 0:
            sub.termination = "merge"
        out.append(sub)
    return out


@dataclass
class SuccessiveResult:
    curves: list
    seeds: list
    notes: list = field(default_factory=list)
    step1: list = field(default_factory=list)
    step2: list = field(default_factory=list)
    step3: list = field(default_factory=list)


# -------------------------------------------------------------- scaling
def default_scale(ssm: SSMModel, spec: AmplitudeSpec, Omega_bounds, eps_bounds, with_time=False,
                  mode="TI", fos=None) -> np.ndarray:
    """Affine scale of the augmented unknowns: design window and multiplier sizes."""
    m = ssm.m
    y_s = _amplitude_scale(ssm, eps_bounds[1], Omega_bounds)
    dO = Omega_bounds[1] - Omega_bounds[0]
    de = eps_bounds[1] - eps_bounds[0]
    # typical multiplier magnitude lam ~ |dA/dy| / |h_y|
    damping = max(np.abs(ssm.lambda_E.real).min(), 1e-12)
    s = SlowState.from_q(np.full(m, y_s / np.sqrt(2)), 0.5 * sum(Omega_bounds), eps_bounds[1])
    try:
        A, g, _ = amplitude_jet(spec, ssm, s, mode, fos=fos)
    except Exception:  # pragma: no cover - conservative fallback
        A, g = 1.0, np.ones(2 * m + 3)
    lam_s = max(np.abs(g[: 2 * m]).max() / damping, 1e-12)
    eta_s = max(lam_s * max(np.abs(ssm.f).max(), 1e-12), 1e-12)
    etaO = max(A / dO, 1e-12)
    parts = [np.full(2 * m, y_s), [dO, de]]
    if with_time:
        parts.append([2 * np.pi / max(Omega_bounds[0], 1e-12)])
    parts.append([1.0, etaO, eta_s])
    if with_time:
        parts.append([max(A * Omega_bounds[1], 1e-12)])
    parts.append(np.full(2 * m, lam_s))
    return np.concatenate([np.asarray(p, float) for p in parts])


# ------------------------------------------------------------ pipelines
def _seed_states(ssm, eps0, Omega_bounds, starts):
    if starts is not None:
        return list(starts)
    seeds = [find_fixed_point(ssm, Omega_bounds[0], eps0).state]
    if ssm.m == 1:
        # closed components away from rho = 0 are isolas: seed one point on each
        rho_max = 50 * _amplitude_scale(ssm, eps0, Omega_bounds)
        from .frs import ab_functions
        for lo, hi in solution_components_m1(ssm, eps0, rho_max)[1:]:
            rho = 0.5 * (lo + hi)
            a, b = ab_functions(ssm, np.array([rho]))
            f = complex(ssm.f[0])
            disc = (eps0 * abs(f)) ** 2 - a[0] ** 2
            Om = b[0] + np.sqrt(max(disc, 0.0)) / rho
            phase = (-a[0] + 1j * rho * (Om - b[0])) / (eps0 * f)
            q = rho * np.exp(-1j * np.angle(phase))
            if Omega_bounds[0] <= Om <= Omega_bounds[1]:
                seeds.append(SlowState.from_q(np.array([q]), Om, eps0))
    return seeds


def _near_existing(curves, zp, u, tol=0.05) -> bool:
    """Whether design point ``u`` lies on one of ``curves`` (scaled polyline distance)."""
    m = zp.layout.m
    sel = list(range(2 * m + 2))
    p = np.asarray(u, float)[sel] / zp.scale[sel]
    for c in curves:
        P = np.column_stack([c.y, c.Omega, c.eps]) / zp.scale[sel]
        if len(P) == 1:
            if np.linalg.norm(P[0] - p) < tol:
                return True
            continue
        a, b = P[:-1], P[1:]
        d = b - a
        lam = np.clip(np.einsum("ij,ij->i", p - a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0, 1)
        if np.min(np.linalg.norm(a + lam[:, None] * d - p, axis=1)) < tol:
            return True
    return False


def _step3(zp, u_start, fixed, bounds, ctrl, lam_cap):
    """Release ``eps`` from a stationary point and continue both ways.

    The multipliers are normalized by their scaled norm, so a merge of a
    ridge with a trench (where ``eta_A`` vanishes) is crossed and reported
    as an ``SN`` event labelled ``eta_A``.  Returns the points normalized to
    ``eta_A = 1`` (the merge points themselves are dropped).
    """
    L = zp.layout
    m = L.m
    nd = L.n_design
    zp_free = with_normalized(zp, fixed, u_start)
    zp_free.tests = {"eta_A": lambda u: u[nd]}
    e_dir = np.zeros(L.n_u)
    e_dir[2 * m + 1] = 1.0
    bnds = dict(bounds)
    parts, terms, events = [], [], []
    for sgn in (-1, 1):
        br = continue_1d(zp_free, u_start, direction=sgn * e_dir, bounds=bnds, ctrl=ctrl,
                         fold_monitors=["eps"], correct_start=True)
        parts.append(br.u)
        terms.append(br.termination)
        for e in br.events:
            e.data["eps"] = float(e.u[2 * m + 1])
            e.data["Omega"] = float(e.u[2 * m])
            if e.kind == "SN" and e.label == "eta_A":
                e.kind, e.label = "MERGE", "simple-bifurcation"
        events += br.events
    U = np.vstack([parts[0][::-1], parts[1][1:]])
    keep = np.abs(U[:, nd]) > 1e-6 * np.abs(U[:, nd]).max()
    U = np.array([normalize_multipliers(L, u) for u in U[keep]])
    if lam_cap is not None:
        big = np.linalg.norm(U[:, L.index["lam0"]:], axis=1) > lam_cap
        U = U[~big]
    return U, terms, events


def _design_stall(zp, window: int = 10, ratio: float = 1e-2):
    """Stop rule for runs creeping towards a saddle-node.

    Near a saddle-node the design variables barely move while the
    multipliers grow; stop when the scaled design displacement over the last
    ``window`` steps is below ``ratio`` times the scaled arclength covered.
    """
    nd = zp.layout.n_design

    def check(branch):
        if len(branch.points) <= window:
            return None
        a, b = branch.points[-window - 1], branch.points[-1]
        design = np.linalg.norm((b[:nd] - a[:nd]) / zp.scale[:nd])
        arc = branch.arclength[-1] - branch.arclength[-window - 1]
        return "sn-approach" if design < ratio * arc else None

    return check


def _termination_label(term: str) -> str:
    if term.startswith("BOUNDARY:eps"):
        return "eps-bound"
    if term.startswith("BOUNDARY:Omega"):
        return "Omega-bound"
    if term.startswith("BOUNDARY:lambda_norm") or term in ("stall", "sn-approach"):
        return "stall"
    return term


def run_successive_L2(zp: ZeroProblem, eps0: float, Omega_bounds, eps_bounds, starts=None,
                      ctrl: StepControl | None = None, lam_cap: float | None = 1e8, split: bool = True,
                      dedupe: bool = True, existing=()) -> SuccessiveResult:
    """Extract ridges and trenches of an L2 amplitude by successive continuation.

    Step 1 traces forced response curves at ``eps0`` with zero multipliers
    and collects branch points (the amplitude extrema).  Step 2 switches to
    the secondary branch at each and grows the multipliers to ``eta_A = 1``
    with the design variables frozen.  Step 3 fixes ``eta_A = 1`` and
    ``eta_Omega = 0`` and releases ``eps``.

    Parameters
    ----------
    starts : list of SlowState, optional
        Fixed points at ``eps0`` that start the Step-1 curves.  By default the
        lower frequency bound plus, for single-pair models, one point on every
        isola.
    existing : list of RidgeCurve
        Curves from earlier runs; seeds lying on them are skipped.
    """
    fonc = zp.fonc
    L = zp.layout
    if L.with_time:
        raise ValueError("use run_successive_opt for sampled-coordinate amplitudes")
    if not eps_bounds[0] <= eps0 <= eps_bounds[1]:
        raise ValueError("eps0 must lie inside the eps bounds")
    ctrl = ctrl or StepControl(h0=0.01, h_max=0.05, max_steps=4000)
    idx = L.index
    res = SuccessiveResult([], [])
    bounds_O = {"Omega": tuple(Omega_bounds)}
    for s0 in _seed_states(fonc.ssm, eps0, Omega_bounds, starts):
        u0 = np.zeros(L.n_u)
        u0[: 2 * L.m] = s0.to_cartesian().coords
        u0[2 * L.m], u0[2 * L.m + 1] = s0.Omega, eps0
        zp1 = with_fixed(zp, {"eps": eps0, "eta_Omega": 0.0})
        direction = np.zeros(L.n_u)
        direction[2 * L.m] = 1.0
        br1 = continue_1d(zp1, u0, direction=direction, bounds=bounds_O, ctrl=ctrl, detect_bp=True,
                          fold_monitors=["A"])
        res.step1.append(br1)
        for ev in br1.events_of("BP"):
            res.seeds.append(ev.u.copy())
            try:
                u1, t1 = detect_and_switch_branch(br1, ev, away_from=np.eye(L.n_u)[idx["eta_A"]])
                br2 = continue_1d(zp1, u1, direction=t1, bounds={"eta_A": (None, 1.0)}, ctrl=ctrl)
            except (BranchingError, ContinuationError) as exc:
                res.notes.append(f"branch switch failed at Omega={ev.u[2 * L.m]:.6g}: {exc}")
                continue
            res.step2.append(br2)
            if not br2.termination.startswith("BOUNDARY:eta_A"):
                res.notes.append(f"secondary branch ended with {br2.termination}")
                continue
            u_star = br2.points[-1].copy()
            u_star[idx["eta_A"]] = 1.0
            if dedupe and _near_existing(list(existing) + res.curves, zp, u_star):
                continue
            bounds3 = {"eps": tuple(eps_bounds), "Omega": tuple(Omega_bounds)}
            U, terms, events = _step3(zp, u_star, {"eta_Omega": 0.0}, bounds3, ctrl, lam_cap)
            term = "/".join(_termination_label(t) for t in terms)
            curve = _curve_from_points(with_fixed(zp, {"eta_A": 1.0, "eta_Omega": 0.0}), U, term, events)
            res.curves.extend(split_by_class(curve) if split else [curve])
    if not res.seeds:
        res.notes.append("no amplitude extrema inside the frequency window")
    return res


def run_successive_opt(zp: ZeroProblem, eps0: float, Omega0: float, Omega_bounds, eps_bounds,
                       ctrl: StepControl | None = None, lam_cap: float | None = 1e8, split: bool = True,
                       start: SlowState | None = None) -> SuccessiveResult:
    """Extract ridges and trenches of a sampled coordinate ``z_opt(t)``.

    Step 1 sweeps ``t`` over one period at fixed ``(eps0, Omega0)``; the
    maximum of ``z_opt`` is a branch point.  Step 2 grows the multipliers to
    ``eta_A = 1``.  Step 3 releases ``Omega`` at fixed ``eps0`` and locates
    ``eta_Omega = 0`` (amplitude extrema along the curve).  Step 4 fixes
    ``eta_Omega = 0`` and releases ``eps``.
    """
    fonc = zp.fonc
    L = zp.layout
    if not L.with_time:
        raise ValueError("run_successive_opt needs a sampled-coordinate problem")
    if not (Omega_bounds[0] <= Omega0 <= Omega_bounds[1] and eps_bounds[0] <= eps0 <= eps_bounds[1]):
        raise ValueError("(eps0, Omega0) must lie inside the bounds")
    ctrl = ctrl or StepControl(h0=0.01, h_max=0.05, max_steps=4000)
    m = L.m
    idx = L.index
    res = SuccessiveResult([], [])
    fp = find_fixed_point(fonc.ssm, Omega0, eps0, start)
    T = 2 * np.pi / Omega0
    u0 = np.zeros(L.n_u)
    u0[: 2 * m] = fp.state.to_cartesian().coords
    u0[2 * m], u0[2 * m + 1], u0[idx["t"]] = Omega0, eps0, 0.0
    # Step 1: sweep t with zero multipliers; the maximum of z_opt is a branch point
    zp1 = with_fixed(zp, {"eps": eps0, "Omega": Omega0, "eta_t": 0.0})
    direction = np.eye(L.n_u)[idx["t"]]
    br1 = continue_1d(zp1, u0, direction=direction, bounds={"t": (0.0, T)}, ctrl=ctrl, detect_bp=True,
                      fold_monitors=["A"])
    res.step1.append(br1)
    bps = br1.events_of("BP")
    if not bps:
        res.notes.append("no extremum of the sampled coordinate over one period")
        return res
    best = max(bps, key=lambda e: fonc.amplitude(e.u)[0])
    res.seeds.append(best.u.copy())
    # Step 2
    u1, t1 = detect_and_switch_branch(br1, best, away_from=np.eye(L.n_u)[idx["eta_A"]])
    br2 = continue_1d(zp1, u1, direction=t1, bounds={"eta_A": (None, 1.0)}, ctrl=ctrl)
    res.step2.append(br2)
    if not br2.termination.startswith("BOUNDARY:eta_A"):
        res.notes.append(f"secondary branch ended with {br2.termination}")
        return res
    u_star = br2.points[-1].copy()
    u_star[idx["eta_A"]] = 1.0
    # Step 3: release Omega, find eta_Omega = 0
    zp3 = with_fixed(zp, {"eta_A": 1.0, "eta_t": 0.0, "eps": eps0})
    bnds = {"Omega": tuple(Omega_bounds)}
    if lam_cap is not None:
        bnds["lambda_norm"] = (None, lam_cap)
    zp3.tests = {"eta_Omega": lambda u: u[idx["eta_Omega"]]}
    stationary = []
    for sgn in (1, -1):
        br3 = continue_1d(zp3, u_star, direction=sgn * np.eye(L.n_u)[2 * m], bounds=bnds, ctrl=ctrl,
                          stop_fn=_design_stall(zp3))
        res.step3.append(br3)
        if br3.termination.startswith("BOUNDARY:lambda_norm") or br3.termination in ("stall", "sn-approach"):
            res.notes.append("Step-3 run approached a saddle-node; reseed from a segment without SN points")
        stationary += [e.u for e in br3.events if e.kind == "SN" and e.label == "eta_Omega"]
    # Step 4: release eps along eta_Omega = 0
    zp4 = with_fixed(zp, {"eta_A": 1.0, "eta_t": 0.0, "eta_Omega": 0.0})
    bounds4 = {"eps": tuple(eps_bounds), "Omega": tuple(Omega_bounds)}
    for us in stationary:
        if _near_existing(res.curves, zp, us):
            continue
        U, terms, events = _step3(zp, us, {"eta_t": 0.0, "eta_Omega": 0.0}, bounds4, ctrl, lam_cap)
        curve = _curve_from_points(zp4, U, "/".join(_termination_label(t) for t in terms), events)
        res.curves.extend(split_by_class(curve) if split else [curve])
    return res


def simple_bifurcation_eps(result: SuccessiveResult) -> list:
    """``eps`` values where a ridge and a trench merge (simple bifurcation of the curves)."""
    vals = sorted({round(e.data["eps"], 15) for c in result.curves for e in c.events if e.kind == "MERGE"})
    return [float(v) for v in vals]
