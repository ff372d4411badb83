"""Pseudo-arclength continuation of 1D solution manifolds and a 2D atlas.

A :class:`ZeroProblem` bundles ``G: R^n -> R^(n-d)`` with its Jacobian, named
monitor functions and optional scaling.  All geometry (step sizes, tangents,
chart radii) lives in the affinely normalized coordinates
``u~ = (u - offset) / scale``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class ContinuationError(RuntimeError):
    """Corrector failure below the minimum step, or an invalid start."""


class BranchingError(RuntimeError):
    """The tangent cone at a branch point could not be resolved."""


@dataclass
class ZeroProblem:
    """Zero problem ``G(u) = 0`` with Jacobian, monitors and event tests.

    Parameters
    ----------
    residual, jacobian : callable
        ``G(u)`` and ``DG(u)`` (dense array or scipy sparse matrix).
    n_u : int
        Number of unknowns.
    monitors : dict
        Named functions ``u -> float`` (used for bounds and fold detection).
    monitor_grads : dict
        Optional analytic gradients of monitors.
    tests : dict
        Named test functions whose sign changes are reported as ``SN`` events.
    scale, offset : array, optional
        Affine normalization of the unknowns.
    """

    residual: Callable
    jacobian: Callable
    n_u: int
    monitors: dict = field(default_factory=dict)
    monitor_grads: dict = field(default_factory=dict)
    tests: dict = field(default_factory=dict)
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None
    names: list | None = None

    def __post_init__(self):
        self.scale = np.ones(self.n_u) if self.scale is None else np.asarray(self.scale, float)
        self.offset = np.zeros(self.n_u) if self.offset is None else np.asarray(self.offset, float)

    # normalized-coordinate helpers
    def to_scaled(self, u):
        return (np.asarray(u, float) - self.offset) / self.scale

    def from_scaled(self, us):
        return self.offset + self.scale * np.asarray(us, float)

    def G(self, us):
        return np.asarray(self.residual(self.from_scaled(us)), float)

    def J(self, us):
        jac = self.jacobian(self.from_scaled(us))
        if sp.issparse(jac):
            return sp.csr_matrix(jac @ sp.diags(self.scale))
        return np.asarray(jac, float) * self.scale

    def monitor(self, name, u):
        return float(self.monitors[name](u))

    def monitor_grad(self, name, u, direction=None, step=1e-7):
        """Gradient of a monitor (analytic or central differences)."""
        if name in self.monitor_grads:
            return np.asarray(self.monitor_grads[name](u), float)
        if direction is not None:
            d = np.asarray(direction, float)
            h = step * max(1.0, np.linalg.norm(u)) / max(np.linalg.norm(d), 1e-300)
            return (self.monitors[name](u + h * d) - self.monitors[name](u - h * d)) / (2 * h)
        g = np.zeros(self.n_u)
        for i in range(self.n_u):
            e = np.zeros(self.n_u)
            e[i] = step * max(1.0, abs(u[i]))
            g[i] = (self.monitors[name](u + e) - self.monitors[name](u - e)) / (2 * e[i])
        return g

    @property
    def dim(self) -> int:
        return self.n_u - np.atleast_1d(self.residual(self.offset)).size

    def check_jacobian(self, u, step: float = 1e-6) -> float:
        """Relative difference between the analytic and a finite-difference Jacobian."""
        u = np.asarray(u, float)
        jac = self.jacobian(u)
        jac = jac.toarray() if sp.issparse(jac) else np.asarray(jac)
        fd = np.zeros_like(jac)
        for i in range(self.n_u):
            h = step * max(1.0, abs(u[i]))
            e = np.zeros(self.n_u)
            e[i] = h
            fd[:, i] = (np.asarray(self.residual(u + e)) - np.asarray(self.residual(u - e))) / (2 * h)
        return float(np.abs(jac - fd).max() / max(np.abs(jac).max(), 1e-300))


@dataclass
class StepControl:
    h0: float = 0.01
    h_min: float = 1e-8
    h_max: float = 0.1
    max_steps: int = 2000
    tol: float = 1e-10
    step_tol: float = 1e-10
    max_corrector: int = 10
    fast_iters: int = 3
    slow_iters: int = 8
    max_angle: float = 0.35


@dataclass
class Event:
    kind: str
    label: str
    u: np.ndarray
    tangent: np.ndarray
    index: int
    data: dict = field(default_factory=dict)


@dataclass
class Branch:
    """Ordered points of a 1D solution branch with tangents and events."""

    zp: ZeroProblem
    points: list = field(default_factory=list)
    tangents: list = field(default_factory=list)
    arclength: list = field(default_factory=list)
    events: list = field(default_factory=list)
    termination: str = ""

    @property
    def u(self) -> np.ndarray:
        return np.array(self.points)

    def monitor(self, name) -> np.ndarray:
        return np.array([self.zp.monitor(name, p) for p in self.points])

    def events_of(self, kind) -> list:
        return [e for e in self.events if e.kind == kind]

    def _append(self, u, t, s):
        self.points.append(np.asarray(u, float).copy())
        self.tangents.append(np.asarray(t, float).copy())
        self.arclength.append(float(s))


# ------------------------------------------------------------ linear algebra
def _bordered(J, rows):
    """Stack extra dense rows under ``J``."""
    rows = np.atleast_2d(rows)
    if sp.issparse(J):
        return sp.vstack([J, sp.csr_matrix(rows)]).tocsc()
    return np.vstack([J, rows])


def _solve(M, b):
    if sp.issparse(M):
        # minimum degree on A^T + A keeps fill low for bordered banded systems
        return spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(b)
    return np.linalg.solve(M, b)


def _tangent(zp: ZeroProblem, us, ref=None) -> np.ndarray:
    """Unit tangent (null vector of the scaled Jacobian) oriented along ``ref``."""
    J = zp.J(us)
    n = zp.n_u
    if ref is None or not np.any(ref):
        if sp.issparse(J):
            rng = np.random.default_rng(12345)
            ref_try = rng.standard_normal(n)
            t = _solve(_bordered(J, ref_try), np.r_[np.zeros(J.shape[0]), 1.0])
        else:
            _, _, vh = np.linalg.svd(np.atleast_2d(J))
            t = vh[-1]
    else:
        try:
            t = _solve(_bordered(J, ref), np.r_[np.zeros(J.shape[0]), 1.0])
        except (np.linalg.LinAlgError, RuntimeError):
            _, _, vh = np.linalg.svd(J.toarray() if sp.issparse(J) else J)
            t = vh[-1]
    t = t / np.linalg.norm(t)
    if ref is not None and np.dot(t, ref) < 0:
        t = -t
    return t


def _correct(zp: ZeroProblem, us_pred, normal, ctrl: StepControl, anchor=None):
    """Newton on ``[G(u); normal . (u - anchor)] = 0``; returns (u, iterations) or (None, it)."""
    anchor = us_pred if anchor is None else anchor
    us = us_pred.copy()
    n_eq = None
    for it in range(1, ctrl.max_corrector + 1):
        g = zp.G(us)
        n_eq = g.size
        rhs = np.r_[g, np.dot(normal, us - anchor)]
        M = _bordered(zp.J(us), normal)
        try:
            du = _solve(M, -rhs)
        except (np.linalg.LinAlgError, RuntimeError):
            return None, it
        if not np.all(np.isfinite(du)):
            return None, it
        us = us + du
        if np.linalg.norm(du) <= ctrl.step_tol * (1 + np.linalg.norm(us)):
            if np.linalg.norm(zp.G(us)) <= max(ctrl.tol, 1e3 * ctrl.step_tol):
                return us, it
        if np.linalg.norm(du) > 1e3 * (1 + np.linalg.norm(us_pred)):
            return None, it
    g = zp.G(us)
    if np.linalg.norm(g) <= ctrl.tol and n_eq is not None:
        return us, ctrl.max_corrector
    return None, ctrl.max_corrector


def correct_point(zp: ZeroProblem, u0, ctrl: StepControl | None = None, fixed_normal=None) -> np.ndarray:
    """Correct a nearby guess onto the manifold (minimum-norm Gauss-Newton)."""
    ctrl = ctrl or StepControl()
    us = zp.to_scaled(u0)
    for _ in range(50):
        g = zp.G(us)
        if np.linalg.norm(g) <= ctrl.tol:
            return zp.from_scaled(us)
        J = zp.J(us)
        if fixed_normal is not None:
            du = _solve(_bordered(J, fixed_normal), np.r_[-g, 0.0])
        elif sp.issparse(J):
            t = _tangent(zp, us)
            du = _solve(_bordered(J, t), np.r_[-g, 0.0])
        else:
            du = np.linalg.lstsq(J, -g, rcond=None)[0]
        us = us + du
    if np.linalg.norm(zp.G(us)) <= 1e2 * ctrl.tol:
        return zp.from_scaled(us)
    raise ContinuationError(f"initial correction failed, |G| = {np.linalg.norm(zp.G(us)):.3e}")


# ------------------------------------------------------------------- events
def _bp_test(zp, us, t):
    J = zp.J(us)
    if sp.issparse(J):
        return np.nan
    M = np.vstack([J, t])
    sign, logdet = np.linalg.slogdet(M)
    return sign * math.exp(min(logdet, 700.0) - 0.0) if sign != 0 else 0.0


def _event_values(zp, us, t, fold_monitors, detect_bp, bounds):
    u = zp.from_scaled(us)
    du = zp.scale * t
    vals = {}
    for name in fold_monitors:
        vals[("FOLD", name)] = float(np.dot(zp.monitor_grad(name, u, direction=du), du)) \
            if name in zp.monitor_grads else float(zp.monitor_grad(name, u, direction=du))
    if detect_bp:
        vals[("BP", "BP")] = _bp_test(zp, us, t)
    for name, fn in zp.tests.items():
        vals[("SN", name)] = float(fn(u))
    for name, (lo, hi) in bounds.items():
        mu = zp.monitor(name, u)
        if lo is not None:
            vals[("BOUNDARY", f"{name}>=")] = mu - lo
        if hi is not None:
            vals[("BOUNDARY", f"{name}<=")] = hi - mu
    return vals


def _localize(zp, us0, t0, h, key, v0, v1, ctrl, fold_monitors, detect_bp, bounds, tol):
    """Illinois iteration on the arclength offset ``s in (0, h)``."""
    a, b = 0.0, h
    fa, fb = v0, v1
    best = None
    side = 0
    for _ in range(80):
        s = (a * fb - b * fa) / (fb - fa) if fb != fa else 0.5 * (a + b)
        if not a < s < b:
            s = 0.5 * (a + b)
        us, _ = _correct(zp, us0 + s * t0, t0, ctrl)
        if us is None:
            s = 0.5 * (a + b)
            us, _ = _correct(zp, us0 + s * t0, t0, ctrl)
            if us is None:
                break
        t = _tangent(zp, us, t0)
        fs = _event_values(zp, us, t, fold_monitors if key[0] == "FOLD" else [], key[0] == "BP",
                           bounds if key[0] == "BOUNDARY" else {}).get(key)
        if fs is None:
            fs = _event_values(zp, us, t, fold_monitors, detect_bp, bounds)[key]
        best = (us, t, s, fs)
        if fs == 0 or abs(b - a) <= 1e-15 * max(1.0, h) or abs(fs) <= tol:
            break
        if np.sign(fs) == np.sign(fb):
            b, fb = s, fs
            if side == 1:
                fa *= 0.5
            side = 1
        else:
            a, fa = s, fs
            if side == -1:
                fb *= 0.5
            side = -1
    return best


def continue_1d(zp: ZeroProblem, u0, direction=None, bounds: dict | None = None,
                ctrl: StepControl | None = None, fold_monitors=(), detect_bp: bool = False,
                stop_events=("BOUNDARY",), event_tol: float = 1e-12, correct_start: bool = True,
                stop_fn=None) -> Branch:
    """Pseudo-arclength continuation from ``u0``.

    Parameters
    ----------
    direction : array or None
        Initial tangent orientation in *unscaled* coordinates (any vector with
        a positive projection on the desired tangent).
    bounds : dict
        ``monitor name -> (lo, hi)``; crossing a bound ends the run with a
        ``BOUNDARY`` event located on the bound.
    fold_monitors : sequence of str
        Monitors whose extrema along the branch are reported as ``FOLD``.
    detect_bp : bool
        Report sign changes of the bordered-Jacobian determinant as ``BP``.
    stop_events : sequence of str
        Event kinds that terminate the run.
    stop_fn : callable, optional
        ``stop_fn(branch) -> str or None`` checked after every accepted step;
        a returned string ends the run with that termination reason.
    """
    ctrl = ctrl or StepControl()
    bounds = dict(bounds or {})
    u0 = np.asarray(u0, float)
    if correct_start:
        u0 = correct_point(zp, u0, ctrl)
    us = zp.to_scaled(u0)
    ref = None if direction is None else np.asarray(direction, float) / zp.scale
    t = _tangent(zp, us, ref)
    if ref is None:
        t = _tangent(zp, us, None)
    branch = Branch(zp=zp)
    branch._append(u0, zp.scale * t, 0.0)
    vals = _event_values(zp, us, t, fold_monitors, detect_bp, bounds)
    for (kind, label), v in vals.items():
        if kind == "BOUNDARY" and v < -1e-12:
            raise ContinuationError(f"start point violates bound {label}")
    h = ctrl.h0
    s_total = 0.0
    start = us.copy()
    t_start = t.copy()
    steps = 0
    while steps < ctrl.max_steps:
        pred = us + h * t
        new, iters = _correct(zp, pred, t, ctrl)
        ok = new is not None
        if ok:
            t_new = _tangent(zp, new, t)
            if np.dot(t_new, t) < math.cos(ctrl.max_angle) or np.linalg.norm(new - us) > 2.5 * h:
                ok = False
        if not ok:
            h *= 0.5
            if h < ctrl.h_min:
                branch.termination = "stall"
                log.info("continuation stalled after %d steps", steps)
                return branch
            continue
        steps += 1
        new_vals = _event_values(zp, new, t_new, fold_monitors, detect_bp, bounds)
        found = []
        for key, v1 in new_vals.items():
            v0 = vals.get(key)
            if v0 is None or not np.isfinite(v0) or not np.isfinite(v1):
                continue
            if v0 != 0 and np.sign(v1) != np.sign(v0) and v1 != 0:
                loc = _localize(zp, us, t, h, key, v0, v1, ctrl, fold_monitors, detect_bp, bounds, event_tol)
                if loc is not None:
                    found.append((loc[2], key, loc))
            elif v1 == 0 and v0 != 0:
                found.append((h, key, (new, t_new, h, 0.0)))
        found.sort(key=lambda x: x[0])
        stop = False
        for s_ev, key, (u_ev, t_ev, _, f_ev) in found:
            kind, label = key
            branch._append(zp.from_scaled(u_ev), zp.scale * t_ev, s_total + s_ev)
            branch.events.append(Event(kind, label, zp.from_scaled(u_ev), zp.scale * t_ev,
                                       len(branch.points) - 1, {"test": f_ev}))
            if kind in stop_events:
                stop = True
                branch.termination = f"{kind}:{label}"
                break
        if stop:
            return branch
        s_total += h
        branch._append(zp.from_scaled(new), zp.scale * t_new, s_total)
        # closed loop: the last step passed close to the start point
        if steps > 3 and s_total > 4 * ctrl.h0:
            seg = new - us
            lam = np.clip(np.dot(start - us, seg) / max(np.dot(seg, seg), 1e-300), 0, 1)
            if np.linalg.norm(us + lam * seg - start) < 0.25 * h and np.dot(t_new, t_start) > 0:
                branch.termination = "closed"
                # events sitting exactly at the start point close the loop
                start_vals = _event_values(zp, start, t_start, fold_monitors, detect_bp, bounds)
                for key, v in start_vals.items():
                    if key[0] != "BOUNDARY" and abs(v) <= event_tol:
                        branch.events.append(Event(key[0], key[1], branch.points[0], branch.tangents[0],
                                                   0, {"test": v}))
                return branch
        if stop_fn is not None:
            reason = stop_fn(branch)
            if reason:
                branch.termination = reason
                return branch
        us, t, vals = new, t_new, new_vals
        if iters <= ctrl.fast_iters:
            h = min(2 * h, ctrl.h_max)
        elif iters > ctrl.slow_iters:
            h = max(0.5 * h, ctrl.h_min)
    branch.termination = "max_steps"
    return branch


def _second_directional(zp, us, a, b, step=1e-5):
    """``D^2 G(us)[a, b]`` by central differences of the scaled Jacobian."""
    Jp = zp.J(us + step * b)
    Jm = zp.J(us - step * b)
    return (Jp @ a - Jm @ a) / (2 * step)


def detect_and_switch_branch(branch: Branch, event: Event, h: float | None = None,
                             ctrl: StepControl | None = None, away_from=None):
    """Start point and tangent of the secondary branch through a branch point.

    The two-dimensional kernel of the Jacobian at the branch point is
    resolved with the algebraic branching equation; the root least aligned
    with the primary tangent gives the secondary direction.

    Returns ``(u1, t1)``: a corrected point on the secondary branch and its
    unscaled tangent, oriented away from the branch point (and, when
    ``away_from`` is given, with a positive projection onto it).
    """
    zp = branch.zp
    ctrl = ctrl or StepControl()
    h = h or ctrl.h0
    us = zp.to_scaled(event.u)
    tp = event.tangent / zp.scale
    tp = tp / np.linalg.norm(tp)
    J = zp.J(us)
    Jd = J.toarray() if sp.issparse(J) else J
    U, S, Vh = np.linalg.svd(Jd)
    n = zp.n_u
    v1, v2 = Vh[-1], Vh[-2]
    phi = U[:, -1]
    a11 = phi @ _second_directional(zp, us, v1, v1)
    a12 = phi @ _second_directional(zp, us, v1, v2)
    a22 = phi @ _second_directional(zp, us, v2, v2)
    cands = []
    scale = max(abs(a11), abs(a12), abs(a22))
    if scale > 1e-8:
        disc = a12**2 - a11 * a22
        if disc < -1e-12 * scale**2:
            raise BranchingError("algebraic branching equation has no real roots")
        disc = max(disc, 0.0)
        if abs(a22) > 1e-12 * scale:
            for sgn in (1, -1):
                beta = (-a12 + sgn * math.sqrt(disc)) / a22
                cands.append(v1 + beta * v2)
        else:
            cands.append(v2.copy())
            if abs(a11) > 1e-12 * scale or abs(a12) > 1e-12 * scale:
                cands.append(-2 * a12 * v1 + a11 * v2)
    # fallback: orthogonal complement of the primary tangent in the kernel
    w = v1 - np.dot(v1, tp) * tp
    w2 = v2 - np.dot(v2, tp) * tp
    comp = w if np.linalg.norm(w) > np.linalg.norm(w2) else w2
    cands.append(comp)
    cands = [c / np.linalg.norm(c) for c in cands if np.linalg.norm(c) > 0]
    ts = min(cands, key=lambda c: abs(np.dot(c, tp)))
    if abs(np.dot(ts, tp)) > 0.99:
        raise BranchingError("secondary direction is parallel to the primary branch")
    if away_from is not None and np.dot(ts, np.asarray(away_from) / zp.scale) < 0:
        ts = -ts
    for _ in range(30):
        new, _ = _correct(zp, us + h * ts, ts, ctrl)
        if new is not None and np.linalg.norm(new - us) > 0.2 * h:
            t1 = _tangent(zp, new, ts)
            return zp.from_scaled(new), zp.scale * t1
        h *= 0.5
        if h < ctrl.h_min:
            break
    raise BranchingError("could not correct onto the secondary branch")


# ===================================================================== atlas
@dataclass
class Chart:
    """Chart of a 2D atlas: base point, tangent basis, polygon and radius."""

    id: int
    u: np.ndarray
    T: np.ndarray
    R: float
    polygon: np.ndarray = None
    edges: list = None
    neighbors: set = field(default_factory=set)
    boundary: bool = False
    monitors: dict = field(default_factory=dict)


@dataclass
class Atlas:
    zp: ZeroProblem
    charts: list = field(default_factory=list)
    faces: list = field(default_factory=list)
    boundary_report: list = field(default_factory=list)
    termination: str = ""

    @property
    def points(self) -> np.ndarray:
        return np.array([c.u for c in self.charts])

    def area(self) -> float:
        """Total area of the chart polygons in normalized coordinates."""
        total = 0.0
        for c in self.charts:
            P = c.polygon
            if P is not None and len(P) >= 3:
                x, y = P[:, 0], P[:, 1]
                total += 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        return total

    def double_cover(self) -> list:
        """Pairs (i, j) where chart j's base point lies strictly inside chart i's polygon."""
        bad = []
        for ci in self.charts:
            for j in ci.neighbors:
                cj = self.charts[j]
                p = ci.T.T @ (self.zp.to_scaled(cj.u) - self.zp.to_scaled(ci.u))
                if _strictly_inside(ci.polygon, p):
                    bad.append((ci.id, j))
        return bad

    def to_json(self, path, monitor_names=()) -> None:
        data = {
            "vertices": [c.u.tolist() + [c.monitors.get(k, float("nan")) for k in monitor_names]
                         for c in self.charts],
            "vertex_fields": [f"u{i}" for i in range(self.zp.n_u)] + list(monitor_names),
            "polygons": [list(f) for f in self.faces],
            "charts": [{"id": c.id, "R": c.R, "boundary": c.boundary, "neighbors": sorted(c.neighbors)}
                       for c in self.charts],
        }
        Path(path).write_text(json.dumps(data))

    def to_obj(self, path, coords: Callable) -> None:
        """Triangulated OBJ; ``coords(chart) -> (x, y, z)`` picks the embedding."""
        lines = [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in (coords(c) for c in self.charts)]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        Path(path).write_text("\n".join(lines) + "\n")


def _strictly_inside(poly, p, tol=1e-9) -> bool:
    if poly is None or len(poly) < 3:
        return False
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross <= tol * max(1.0, np.linalg.norm(b - a)):
            return False
    return True


def _clip(poly, labels, normal, offset, label):
    """Clip a convex polygon (CCW) by ``normal . x <= offset``.

    ``labels[k]`` names the constraint that owns edge ``(k, k+1)``.
    """
    n = len(poly)
    if n == 0:
        return poly, labels
    vals = poly @ normal - offset
    if np.all(vals <= 0):
        return poly, labels
    out, out_lab = [], []
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        va, vb = vals[k], vals[(k + 1) % n]
        if va <= 0:
            out.append(a)
            out_lab.append(labels[k])
        if (va <= 0) != (vb <= 0):
            x = a + (b - a) * (va / (va - vb))
            out.append(x)
            out_lab.append(labels[k] if va > 0 else label)
    return np.array(out).reshape(-1, 2), out_lab


def _initial_polygon(R, sides=8):
    ang = np.arange(sides) * 2 * np.pi / sides
    rad = R / math.cos(math.pi / sides)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]), [("init", k) for k in range(sides)]


def _tangent_basis(zp, us, prev=None):
    J = zp.J(us)
    Jd = J.toarray() if sp.issparse(J) else J
    _, _, vh = np.linalg.svd(np.atleast_2d(Jd))
    T = vh[-2:].T
    if prev is not None:
        # align orientation with the previous basis (Procrustes)
        Uo, _, Vo = np.linalg.svd(T.T @ prev)
        T = T @ (Uo @ Vo)
    Q, _ = np.linalg.qr(T)
    if prev is not None:
        Uo, _, Vo = np.linalg.svd(Q.T @ prev)
        Q = Q @ (Uo @ Vo)
    return Q


def atlas_2d(zp: ZeroProblem, u0, bounds: dict | None = None, R0: float = 0.1, R_min: float = 1e-3,
             R_max: float | None = None, max_charts: int = 5000, ctrl: StepControl | None = None,
             sides: int = 8, max_angle: float = 0.5, neighbor_cos: float = 0.7) -> Atlas:
    """Cover the connected 2D solution manifold through ``u0``.

    Charts are disks of radius ``R`` in the tangent plane.  Each chart's
    polygon is the circumscribing regular polygon clipped by the power-diagram
    half-planes of its neighbours and by the linearized monitor bounds.  A
    polygon vertex outside the disk marks uncovered territory; a new chart is
    predicted on the disk boundary in that direction, corrected onto the
    manifold orthogonally to the source tangent plane, and merged.  Failed
    corrections shrink the source radius.
    """
    ctrl = ctrl or StepControl(tol=1e-11, max_corrector=12)
    bounds = dict(bounds or {})
    R_max = R_max or R0
    if zp.dim != 2:
        raise ValueError("atlas_2d needs a two-dimensional zero problem")
    u0 = correct_point(zp, u0, ctrl)
    atlas = Atlas(zp=zp)
    centers = []

    def bound_cuts(chart):
        cuts = []
        for name, (lo, hi) in bounds.items():
            mu = zp.monitor(name, chart.u)
            g = zp.monitor_grad(name, chart.u) * zp.scale  # gradient in scaled coords
            gt = chart.T.T @ g
            if np.linalg.norm(gt) < 1e-14:
                continue
            if hi is not None:
                cuts.append((gt, hi - mu, ("bound", name, "hi")))
            if lo is not None:
                cuts.append((-gt, mu - lo, ("bound", name, "lo")))
        return cuts

    def rebuild(chart):
        P, lab = _initial_polygon(chart.R, sides)
        us = zp.to_scaled(chart.u)
        for j in sorted(chart.neighbors):
            other = atlas.charts[j]
            p = chart.T.T @ (zp.to_scaled(other.u) - us)
            d2 = float(p @ p)
            if d2 == 0:
                continue
            P, lab = _clip(P, lab, p, 0.5 * (d2 + chart.R**2 - other.R**2), ("chart", j))
        for normal, off, label in chart.bound_cuts:
            P, lab = _clip(P, lab, normal, off, label)
        chart.polygon, chart.edges = P, lab
        chart.boundary = any(l[0] == "bound" for l in lab)

    def add_chart(u, T, R):
        cid = len(atlas.charts)
        ch = Chart(id=cid, u=np.asarray(u, float), T=T, R=R)
        ch.monitors = {k: zp.monitor(k, ch.u) for k in zp.monitors}
        ch.bound_cuts = bound_cuts(ch)
        us = zp.to_scaled(ch.u)
        if centers:
            C = np.array(centers)
            dist = np.linalg.norm(C - us, axis=1)
            radii = np.array([c.R for c in atlas.charts])
            for j in np.flatnonzero(dist < radii + R):
                other = atlas.charts[j]
                sv = np.linalg.svd(other.T.T @ T, compute_uv=False)
                if sv.min() < neighbor_cos:
                    continue
                ch.neighbors.add(int(j))
                other.neighbors.add(cid)
        atlas.charts.append(ch)
        centers.append(us)
        rebuild(ch)
        for j in ch.neighbors:
            rebuild(atlas.charts[j])
        return ch

    us0 = zp.to_scaled(u0)
    add_chart(u0, _tangent_basis(zp, us0), R0)
    queue = [0]
    attempts = 0
    while queue and len(atlas.charts) < max_charts:
        ci = queue[-1]
        chart = atlas.charts[ci]
        P = chart.polygon
        if P is None or len(P) == 0:
            queue.pop()
            continue
        radii = np.linalg.norm(P, axis=1)
        outside = [k for k in range(len(P)) if radii[k] > chart.R * (1 + 1e-9)
                   and not _vertex_on_bound(chart, k)]
        if not outside:
            queue.pop()
            continue
        k = max(outside, key=lambda i: radii[i])
        direction = P[k] / radii[k]
        us = zp.to_scaled(chart.u)
        pred = us + chart.T @ (chart.R * direction)
        attempts += 1
        ok = False
        new, _ = _correct_2d(zp, pred, chart.T, ctrl)
        if new is not None:
            new = _project_on_bounds(zp, new, chart.T, bounds, ctrl)
        if new is not None:
            Tn = _tangent_basis(zp, new, chart.T)
            sv = np.linalg.svd(Tn.T @ chart.T, compute_uv=False)
            drift = np.linalg.norm(new - pred)
            ok = sv.min() > math.cos(max_angle) and drift < 0.5 * chart.R
        if ok:
            R_new = min(R_max, chart.R * (1.25 if drift < 0.05 * chart.R else 1.0))
            ch = add_chart(zp.from_scaled(new), Tn, R_new)
            queue.append(ch.id)
            # the new chart may have cut the source polygon; re-examine later
        else:
            if chart.R * 0.5 < R_min:
                # cannot resolve: mark vertex region as an expansion stall
                atlas.boundary_report.append({"chart": ci, "reason": "stall", "u": chart.u.tolist()})
                chart.boundary = True
                chart.stalled = True
                queue.pop()
                continue
            chart.R *= 0.5
            rebuild(chart)
            for j in list(chart.neighbors):
                rebuild(atlas.charts[j])
    atlas.termination = "complete" if not queue else "max_charts"
    atlas.faces = _dual_faces(atlas)
    return atlas


def _vertex_on_bound(chart, k) -> bool:
    if getattr(chart, "stalled", False):
        return True
    n = len(chart.edges)
    a, b = chart.edges[k], chart.edges[(k - 1) % n]
    return a[0] == "bound" and b[0] == "bound"


def _correct_2d(zp, pred, T, ctrl):
    us = pred.copy()
    for _ in range(ctrl.max_corrector):
        g = zp.G(us)
        rhs = np.r_[g, T.T @ (us - pred)]
        J = zp.J(us)
        M = _bordered(J, T.T)
        try:
            du = _solve(M, -rhs)
        except (np.linalg.LinAlgError, RuntimeError):
            return None, 0
        us = us + du
        if np.linalg.norm(du) <= ctrl.step_tol * (1 + np.linalg.norm(us)):
            break
    if np.linalg.norm(zp.G(us)) <= ctrl.tol:
        return us, 0
    return None, 0


def _project_on_bounds(zp, us, T, bounds, ctrl):
    """Move a chart centre that overshoots a monitor bound back onto it."""
    u = zp.from_scaled(us)
    for name, (lo, hi) in bounds.items():
        mu = zp.monitor(name, u)
        target = hi if hi is not None and mu > hi else lo if lo is not None and mu < lo else None
        if target is None:
            continue
        g = zp.monitor_grad(name, u) * zp.scale
        gt = T.T @ g
        if np.linalg.norm(gt) < 1e-14:
            continue
        along = T @ (np.array([-gt[1], gt[0]]) / np.linalg.norm(gt))
        anchor = us.copy()
        for _ in range(ctrl.max_corrector):
            u = zp.from_scaled(us)
            rhs = np.r_[zp.G(us), zp.monitor(name, u) - target, along @ (us - anchor)]
            M = _bordered(zp.J(us), np.vstack([zp.monitor_grad(name, u) * zp.scale, along]))
            try:
                du = _solve(M, -rhs)
            except (np.linalg.LinAlgError, RuntimeError):
                return None
            us = us + du
            if np.linalg.norm(du) <= ctrl.step_tol * (1 + np.linalg.norm(us)):
                break
        if np.linalg.norm(zp.G(us)) > ctrl.tol:
            return None
    return us


def _dual_faces(atlas: Atlas) -> list:
    """Triangles of chart centres meeting at polygon vertices."""
    faces = set()
    for c in atlas.charts:
        if c.polygon is None:
            continue
        n = len(c.edges)
        for k in range(n):
            a, b = c.edges[k - 1], c.edges[k]
            if a[0] == "chart" and b[0] == "chart" and a[1] != b[1]:
                tri = tuple(sorted((c.id, a[1], b[1])))
                faces.add(tri)
    return sorted(faces)
