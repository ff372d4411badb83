"""Forced response surfaces and curves of SSM-based reduced-order models.

Fixed points of the slow dynamics correspond to periodic orbits of the
forced system, so the forced response surface is the two-dimensional zero
set of the slow vector field over ``(y, Omega, eps)``, mapped to amplitude.
For a single mode pair this zero set has a closed form in ``(rho, eps)``;
in general it is covered by :func:`~ssmfrs.continuation.atlas_2d`.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .amplitude import AmplitudeSpec, CorrectionCache, amp_L2, amp_opt, amplitude_jet, assemble_harmonics, peak_time
from .continuation import Atlas, Branch, StepControl, ZeroProblem, atlas_2d, continue_1d
from .rom import ConvergenceError, SlowState, classify, find_fixed_point, slow_derivatives, slow_jacobian
from .ssm import SSMModel

log = logging.getLogger(__name__)


class UnsupportedModelError(ValueError):
    """The requested construction does not apply to this ROM."""


# -------------------------------------------------------------------- helpers
def _correction_source(ssm, fos, mode):
    if mode.upper() != "TV":
        return None
    if fos is None:
        raise ValueError("TV mode needs the first-order system")
    return CorrectionCache(fos, ssm, size=64)


def amplitude_value(spec: AmplitudeSpec, ssm: SSMModel, s: SlowState, mode: str = "TI",
                    correction=None, fos=None) -> float:
    """Scalar amplitude of the orbit at ``s``.

    L2 specs return the weighted root-sum-square of the harmonics; OPT specs
    return the maximum of the sampled coordinate over one period.
    """
    harm = assemble_harmonics(ssm, s, correction=correction, mode=mode, fos=fos)
    if spec.kind == "L2":
        return amp_L2(spec, harm)
    if s.Omega == 0:
        return amp_opt(spec, harm, 1.0, 0.0)
    return amp_opt(spec, harm, s.Omega, peak_time(spec, harm, s.Omega))


def polar_coefficients(ssm: SSMModel) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``gamma_k`` of ``q^(k+1) qbar^k`` in the single-pair slow field.

    Returns ``(degrees, gamma)`` with ``a(rho) = sum Re(gamma_k) rho^(2k+1)`` and
    ``b(rho) = sum Im(gamma_k) rho^(2k)``.
    """
    if ssm.m != 1:
        raise UnsupportedModelError("the closed-form surface needs a single mode pair; use numeric_frs")
    ks, gs = [], []
    for (c, d), coeff in ssm.slow_poly.terms.items():
        c0, d0 = int(c[0]), int(d[0])
        if c0 != d0 + 1:
            if abs(coeff[0]) > 1e-12 * max(1.0, abs(ssm.lambda_E[0])):
                raise UnsupportedModelError("slow field has non-resonant terms; closed form does not apply")
            continue
        ks.append(d0)
        gs.append(complex(coeff[0]))
    return np.array(ks, int), np.array(gs, complex)


def ab_functions(ssm: SSMModel, rho):
    """``a(rho), b(rho)`` of the polar slow field (vectorized)."""
    ks, gs = polar_coefficients(ssm)
    rho = np.asarray(rho, float)
    a = np.zeros_like(rho)
    b = np.zeros_like(rho)
    for k, g in zip(ks, gs):
        a = a + g.real * rho ** (2 * k + 1)
        b = b + g.imag * rho ** (2 * k)
    return a, b


# ----------------------------------------------------------------------- mesh
@dataclass
class FRSMesh:
    """Vertices and faces of a forced response surface."""

    Omega: np.ndarray
    eps: np.ndarray
    coords: np.ndarray
    amplitudes: dict
    stable: np.ndarray
    faces: list
    provenance: str
    spec_names: list = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return int(self.Omega.size)

    def max_residual(self, ssm: SSMModel) -> float:
        res = 0.0
        for y, Om, ep in zip(self.coords, self.Omega, self.eps):
            h, _, _ = slow_derivatives(ssm, y, Om, ep)
            res = max(res, float(np.abs(h).max()))
        return res

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "spec_names": list(self.spec_names),
            "Omega": self.Omega.tolist(),
            "eps": self.eps.tolist(),
            "coords": self.coords.tolist(),
            "amplitudes": {k: np.asarray(v).tolist() for k, v in self.amplitudes.items()},
            "stable": [bool(b) for b in self.stable],
            "faces": [list(map(int, f)) for f in self.faces],
        }

    @classmethod
    def from_dict(cls, data: dict) -> FRSMesh:
        return cls(
            Omega=np.asarray(data["Omega"], float),
            eps=np.asarray(data["eps"], float),
            coords=np.asarray(data["coords"], float).reshape(len(data["Omega"]), -1),
            amplitudes={k: np.asarray(v, float) for k, v in data["amplitudes"].items()},
            stable=np.asarray(data["stable"], bool),
            faces=[tuple(f) for f in data["faces"]],
            provenance=data["provenance"],
            spec_names=list(data.get("spec_names", [])),
        )


def export_mesh(mesh: FRSMesh, path, fmt: str | None = None, amplitude: str | None = None) -> Path:
    """Write a mesh as JSON (lossless), CSV (one row per vertex) or OBJ.

    The OBJ embedding is ``(Omega, eps, amplitude)`` with faces triangulated.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        path.write_text(json.dumps(mesh.to_dict()))
    elif fmt == "csv":
        names = list(mesh.amplitudes)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["Omega", "eps"] + [f"y{i}" for i in range(mesh.coords.shape[1])] + names + ["stable"])
            for i in range(mesh.n_vertices):
                wr.writerow([repr(float(mesh.Omega[i])), repr(float(mesh.eps[i]))]
                            + [repr(float(v)) for v in mesh.coords[i]]
                            + [repr(float(mesh.amplitudes[k][i])) for k in names] + [int(mesh.stable[i])])
    elif fmt == "obj":
        name = amplitude or (mesh.spec_names[0] if mesh.spec_names else next(iter(mesh.amplitudes)))
        amp = mesh.amplitudes[name]
        lines = [f"v {o:.12g} {e:.12g} {a:.12g}" for o, e, a in zip(mesh.Omega, mesh.eps, amp)]
        for f in mesh.faces:
            for k in range(1, len(f) - 1):
                lines.append(f"f {f[0] + 1} {f[k] + 1} {f[k + 1] + 1}")
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")
    return path


def load_mesh(path) -> FRSMesh:
    return FRSMesh.from_dict(json.loads(Path(path).read_text()))


def _vertex_data(ssm, fos, specs, mode, states):
    corr = _correction_source(ssm, fos, mode)
    amps = {sp.name: np.empty(len(states)) for sp in specs}
    stable = np.empty(len(states), bool)
    for i, s in enumerate(states):
        for sp in specs:
            amps[sp.name][i] = amplitude_value(sp, ssm, s, mode, corr, fos)
        stable[i] = classify(ssm, s)[1]
    return amps, stable


# ---------------------------------------------------------- closed form (m=1)
def analytic_frs_m1(ssm: SSMModel, rho_grid, eps_grid, Omega_bounds=None, specs=(), mode: str = "TI",
                    fos=None) -> FRSMesh:
    """Closed-form surface of a single-pair ROM over a ``(rho, eps)`` grid.

    Each grid node with ``eps^2 |f|^2 >= a(rho)^2`` yields the two roots
    ``Omega = b(rho) +- sqrt(eps^2 |f|^2 - a(rho)^2) / rho``.  The phase is
    recovered from ``eps f e^{-i theta} = -a + i rho (Omega - b)``.
    """
    if ssm.m != 1:
        raise UnsupportedModelError("analytic_frs_m1 needs m = 1; use numeric_frs")
    rho_grid = np.asarray(rho_grid, float)
    eps_grid = np.asarray(eps_grid, float)
    if np.any(rho_grid <= 0):
        raise ValueError("rho grid must be positive")
    f = complex(ssm.f[0])
    a, b = ab_functions(ssm, rho_grid)
    lo, hi = Omega_bounds if Omega_bounds is not None else (-np.inf, np.inf)
    index = {}
    states = []
    for j, eps in enumerate(eps_grid):
        disc = (eps * abs(f)) ** 2 - a**2
        for i, rho in enumerate(rho_grid):
            if disc[i] < 0 or eps == 0:
                continue
            root = np.sqrt(disc[i]) / rho
            for sgn in (1, -1):
                Om = b[i] + sgn * root
                if not lo <= Om <= hi:
                    continue
                phase = (-a[i] + 1j * rho * (Om - b[i])) / (eps * f)
                q = rho * np.exp(-1j * np.angle(phase))  # e^{-i theta} = phase / |phase|
                states.append(SlowState.from_q(np.array([q]), Om, eps))
                index[(i, j, sgn)] = len(states) - 1
    faces = []
    for sgn in (1, -1):
        for j in range(len(eps_grid) - 1):
            for i in range(len(rho_grid) - 1):
                quad = [(i, j, sgn), (i + 1, j, sgn), (i + 1, j + 1, sgn), (i, j + 1, sgn)]
                if all(k in index for k in quad):
                    ids = [index[k] for k in quad]
                    faces += [(ids[0], ids[1], ids[2]), (ids[0], ids[2], ids[3])]
    specs = list(specs)
    amps, stable = _vertex_data(ssm, fos, specs, mode, states)
    coords = np.array([s.coords for s in states]).reshape(len(states), 2)
    return FRSMesh(np.array([s.Omega for s in states]), np.array([s.eps for s in states]), coords, amps,
                   stable, faces, "analytic", [sp.name for sp in specs])


# ------------------------------------------------------------- zero problems
def surface_problem(ssm: SSMModel, specs=(), mode: str = "TI", fos=None, scale=None) -> ZeroProblem:
    """``G(y, Omega, eps) = slow field`` with Omega, eps and amplitude monitors."""
    m = ssm.m
    corr = _correction_source(ssm, fos, mode)

    def residual(u):
        return slow_derivatives(ssm, u[: 2 * m], u[2 * m], u[2 * m + 1])[0]

    def jacobian(u):
        return slow_derivatives(ssm, u[: 2 * m], u[2 * m], u[2 * m + 1])[1]

    monitors = {"Omega": lambda u: u[2 * m], "eps": lambda u: u[2 * m + 1]}
    grads = {"Omega": lambda u: np.eye(2 * m + 2)[2 * m], "eps": lambda u: np.eye(2 * m + 2)[2 * m + 1]}
    for sp in specs:
        monitors[sp.name] = (lambda u, sp=sp: amplitude_value(sp, ssm, SlowState(u[: 2 * m], u[2 * m], u[2 * m + 1]),
                                                               mode, corr, fos))
    monitors["|y|"] = lambda u: float(np.linalg.norm(u[: 2 * m]))
    return ZeroProblem(residual, jacobian, 2 * m + 2, monitors=monitors, monitor_grads=grads, scale=scale)


def slice_problem(ssm: SSMModel, eps: float, spec: AmplitudeSpec | None = None, mode: str = "TI",
                  fos=None, scale=None) -> ZeroProblem:
    """``G(y, Omega) = slow field`` at fixed ``eps`` with an amplitude monitor and SN test."""
    m = ssm.m
    corr = _correction_source(ssm, fos, mode)

    def residual(u):
        return slow_derivatives(ssm, u[: 2 * m], u[2 * m], eps)[0]

    def jacobian(u):
        return slow_derivatives(ssm, u[: 2 * m], u[2 * m], eps)[1][:, : 2 * m + 1]

    def max_real(u):
        return float(np.linalg.eigvals(slow_jacobian(ssm, SlowState(u[: 2 * m], u[2 * m], eps))).real.max())

    monitors = {"Omega": lambda u: u[2 * m]}
    grads = {"Omega": lambda u: np.eye(2 * m + 1)[2 * m]}
    if spec is not None:
        def amp(u):
            s = SlowState(u[: 2 * m], u[2 * m], eps)
            if spec.kind == "L2":
                return amplitude_jet(spec, ssm, s, mode, corr, fos=fos)[0]
            return amplitude_value(spec, ssm, s, mode, corr, fos)

        monitors[spec.name] = amp
        if spec.kind == "L2":
            grads[spec.name] = lambda u: amplitude_jet(spec, ssm, SlowState(u[: 2 * m], u[2 * m], eps), mode, corr,
                                                       fos=fos)[1][: 2 * m + 1]
    return ZeroProblem(residual, jacobian, 2 * m + 1, monitors=monitors, monitor_grads=grads,
                       tests={"SN": max_real}, scale=scale)


def _amplitude_scale(ssm, eps, Omega_bounds):
    damping = np.abs(ssm.lambda_E.real).min()
    mid = 0.5 * (Omega_bounds[0] + Omega_bounds[1])
    detune = np.abs(ssm.lambda_E - 1j * ssm.r_float * mid).min()
    return max(eps * np.abs(ssm.f).max() / max(damping, detune, 1e-12), 1e-12)


# ----------------------------------------------------------------------- FRC
@dataclass
class FRC:
    """Forced response curve at fixed ``eps`` with per-point amplitude and stability."""

    eps: float
    Omega: np.ndarray
    coords: np.ndarray
    amplitude: np.ndarray
    stable: np.ndarray
    events: list
    branch: Branch
    spec_name: str = ""

    def peak(self) -> tuple[float, float]:
        k = int(np.argmax(self.amplitude))
        return float(self.Omega[k]), float(self.amplitude[k])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["Omega", self.spec_name or "amplitude", "stable"]
                        + [f"y{i}" for i in range(self.coords.shape[1])])
            for k in range(self.Omega.size):
                wr.writerow([repr(float(self.Omega[k])), repr(float(self.amplitude[k])), int(self.stable[k])]
                            + [repr(float(v)) for v in self.coords[k]])


def frc_slice(ssm: SSMModel, fos, spec: AmplitudeSpec, eps: float, Omega_bounds, mode: str = "TI",
              ctrl: StepControl | None = None, start: SlowState | None = None, detect_bp: bool = False) -> FRC:
    """Continue fixed points in ``Omega`` at fixed ``eps`` across ``Omega_bounds``.

    Amplitude extrema are reported as ``FOLD`` events of the amplitude
    monitor, stability changes as ``SN`` events.  The run starts at the lower
    frequency bound unless ``start`` is given.
    """
    lo, hi = Omega_bounds
    if not lo < hi:
        raise ValueError("Omega bounds must satisfy lb < ub")
    m = ssm.m
    y_scale = _amplitude_scale(ssm, max(eps, 1e-12), Omega_bounds)
    scale = np.r_[np.full(2 * m, y_scale), hi - lo]
    zp = slice_problem(ssm, eps, spec, mode, fos, scale=scale)
    if start is None:
        start = find_fixed_point(ssm, lo, eps).state
    u0 = np.r_[start.to_cartesian().coords, start.Omega]
    ctrl = ctrl or StepControl(h0=0.01, h_max=0.05, max_steps=5000)
    folds = [spec.name] if eps != 0 else []
    branch = continue_1d(zp, u0, direction=np.r_[np.zeros(2 * m), 1.0],
                         bounds={"Omega": (lo, hi)}, ctrl=ctrl, fold_monitors=folds, detect_bp=detect_bp)
    U = branch.u
    states = [SlowState(u[: 2 * m], u[2 * m], eps) for u in U]
    amps, stable = _vertex_data(ssm, fos, [spec], mode, states)
    return FRC(eps, U[:, 2 * m], U[:, : 2 * m], amps[spec.name], stable, branch.events, branch, spec.name)


# ------------------------------------------------------------- atlas surface
def numeric_frs(ssm: SSMModel, fos, specs, Omega_bounds, eps_bounds, mode: str = "TI", R0: float = 0.05,
                start: SlowState | None = None, max_charts: int = 20000, y_scale: float | None = None) -> FRSMesh:
    """Cover the fixed-point surface over ``Omega_bounds x eps_bounds`` with an atlas.

    Unknowns are ``(y, Omega, eps)``, normalized so the window and the
    expected response amplitude have unit size.
    """
    specs = list(specs)
    (Olo, Ohi), (elo, ehi) = Omega_bounds, eps_bounds
    if not (Olo < Ohi and elo < ehi):
        raise ValueError("bounds must satisfy lb < ub")
    m = ssm.m
    if y_scale is None:
        y_scale = _amplitude_scale(ssm, ehi, Omega_bounds)
    scale = np.r_[np.full(2 * m, y_scale), Ohi - Olo, ehi - elo]
    offset = np.r_[np.zeros(2 * m), Olo, elo]
    zp = surface_problem(ssm, specs, mode, fos, scale=scale)
    zp.offset = offset
    if start is None:
        try:
            start = find_fixed_point(ssm, Olo, elo).state
        except ConvergenceError as exc:
            raise ConvergenceError(f"initial fixed point failed ({exc}); try a smaller eps lower bound") from exc
    u0 = np.r_[start.to_cartesian().coords, start.Omega, start.eps]
    atlas = atlas_2d(zp, u0, bounds={"Omega": (Olo, Ohi), "eps": (elo, ehi)}, R0=R0, max_charts=max_charts)
    return mesh_from_atlas(ssm, fos, specs, mode, atlas)


def mesh_from_atlas(ssm, fos, specs, mode, atlas: Atlas) -> FRSMesh:
    m = ssm.m
    U = atlas.points
    states = [SlowState(u[: 2 * m], u[2 * m], u[2 * m + 1]) for u in U]
    amps, stable = _vertex_data(ssm, fos, specs, mode, states)
    mesh = FRSMesh(U[:, 2 * m], U[:, 2 * m + 1], U[:, : 2 * m], amps, stable, list(atlas.faces), "atlas",
                   [sp.name for sp in specs])
    mesh.atlas = atlas
    return mesh


# --------------------------------------------------------------------- isolas
def solution_components_m1(ssm: SSMModel, eps: float, rho_max: float, samples: int = 4000) -> list:
    """Connected components of the single-pair FRC at ``eps`` as ``rho`` intervals.

    Each maximal interval on which ``eps^2 |f|^2 >= a(rho)^2`` traces one
    closed curve (both frequency roots meet at its ends).  Intervals that do
    not reach ``rho = 0`` are isolas.
    """
    rho = np.linspace(0, rho_max, samples + 1)[1:]
    a, _ = ab_functions(ssm, rho)
    ok = (eps * abs(ssm.f[0])) ** 2 - a**2 >= 0
    comps = []
    k = 0
    while k < ok.size:
        if ok[k]:
            j = k
            while j + 1 < ok.size and ok[j + 1]:
                j += 1
            comps.append((0.0 if k == 0 else float(rho[k]), float(rho[j])))
            k = j + 1
        else:
            k += 1
    return comps


def isola_report(ssm: SSMModel, eps_values, rho_max: float, refine: bool = True) -> dict:
    """Count FRC components per ``eps`` and locate where isolas appear or merge.

    Returns ``{"eps": [...], "components": [...], "isolas": [...], "transitions": [...]}``
    where transitions are ``eps`` values (bisection-refined) at which the
    component count changes.
    """
    if ssm.m != 1:
        raise UnsupportedModelError("isola_report currently covers single-pair ROMs")
    eps_values = np.sort(np.asarray(eps_values, float))
    comps = [solution_components_m1(ssm, e, rho_max) for e in eps_values]
    counts = [len(c) for c in comps]
    isolas = [sum(1 for lo, _ in c if lo > 0) for c in comps]
    trans = []
    for k in range(len(eps_values) - 1):
        if counts[k] != counts[k + 1]:
            lo, hi = eps_values[k], eps_values[k + 1]
            if refine:
                for _ in range(50):
                    mid = 0.5 * (lo + hi)
                    if len(solution_components_m1(ssm, mid, rho_max)) == counts[k]:
                        lo = mid
                    else:
                        hi = mid
            trans.append({"eps": 0.5 * (lo + hi), "from": counts[k], "to": counts[k + 1]})
    return {"eps": eps_values.tolist(), "components": counts, "isolas": isolas, "transitions": trans}
