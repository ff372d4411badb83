"""Command-line front end: ``python3 -m ssmfrs <command> --config run.json``.

A run configuration names a model, the SSM settings, the amplitude
functionals and the forcing window.  Every command writes its artifacts and a
``summary.json`` (peak amplitudes, continuation events, timings) into the
output directory.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mech as mech_mod
from .amplitude import AmplitudeSpec
from .continuation import StepControl
from .frs import analytic_frs_m1, export_mesh, frc_slice, numeric_frs
from .oracle import CollocationScheme, frc_full
from .ridge import (build_fonc_L2, build_fonc_opt, default_scale, run_successive_L2, run_successive_opt,
                    simple_bifurcation_eps)
from .rom import find_fixed_point, save_rom
from .ssm import compute_autonomous_ssm

log = logging.getLogger("ssmfrs")

COMMANDS = ("frc", "frs", "ridge", "ssm", "oracle-frc")
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2

_BUILTINS = {
    "linear_oscillator": mech_mod.build_linear_oscillator,
    "duffing": mech_mod.build_duffing,
    "duffing_chain": mech_mod.build_duffing_chain,
    "beam": mech_mod.build_beam_model,
}


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _bounds(value, path):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected [lower, upper]") from None
    if not lo < hi:
        raise ConfigError(path, "bounds must satisfy lb < ub")
    return lo, hi


@dataclass
class RunConfig:
    """Validated run configuration.

    ``model`` is either ``{"builtin": name, "params": {...}}`` or
    ``{"file": path}`` (a system written by :func:`ssmfrs.mech.save_system`).
    Amplitude entries are ``{"name", "kind": "L2"|"OPT", "indices"}`` with an
    optional weight ``Q``; the index ``"tip"`` resolves to the beam tip.
    """

    model: dict
    Omega_bounds: tuple
    eps_bounds: tuple
    amplitudes: list = field(default_factory=lambda: [{"name": "x", "kind": "L2", "indices": [0]}])
    master_modes: tuple = (0, 1)
    order: int = 5
    mode: str = "TI"
    frc_eps: tuple = ()
    frs: dict = field(default_factory=dict)
    ridge: dict = field(default_factory=dict)
    continuation: dict = field(default_factory=dict)
    collocation: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.model, dict) or not ("builtin" in self.model) ^ ("file" in self.model):
            raise ConfigError("model", "give exactly one of 'builtin' or 'file'")
        if "builtin" in self.model and self.model["builtin"] not in _BUILTINS:
            raise ConfigError("model.builtin", f"unknown model; choose from {sorted(_BUILTINS)}")
        self.Omega_bounds = _bounds(self.Omega_bounds, "Omega_bounds")
        self.eps_bounds = _bounds(self.eps_bounds, "eps_bounds")
        if self.eps_bounds[0] < 0:
            raise ConfigError("eps_bounds", "forcing amplitudes must be non-negative")
        if not isinstance(self.order, int) or self.order < 1:
            raise ConfigError("order", "must be a positive integer")
        if self.order < 3 or self.order % 2 == 0:
            log.warning("order %d: odd orders >= 3 are recommended", self.order)
        self.mode = str(self.mode).upper()
        if self.mode not in ("TI", "TV"):
            raise ConfigError("mode", "must be 'TI' or 'TV'")
        self.master_modes = tuple(int(i) for i in self.master_modes)
        if not self.amplitudes:
            raise ConfigError("amplitudes", "at least one amplitude is required")
        for i, a in enumerate(self.amplitudes):
            if str(a.get("kind", "")).upper() not in ("L2", "OPT"):
                raise ConfigError(f"amplitudes[{i}].kind", "must be 'L2' or 'OPT'")
            if "indices" not in a:
                raise ConfigError(f"amplitudes[{i}].indices", "missing")
        self.frc_eps = tuple(float(e) for e in self.frc_eps)
        for i, e in enumerate(self.frc_eps):
            if e < 0:
                raise ConfigError(f"frc_eps[{i}]", "must be non-negative")
        pipeline = str(self.ridge.get("pipeline", "L2")).upper()
        if pipeline not in ("L2", "OPT"):
            raise ConfigError("ridge.pipeline", "must be 'L2' or 'OPT'")

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        for key in ("model", "Omega_bounds", "eps_bounds"):
            if key not in data:
                raise ConfigError(key, "required field missing")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ helpers
def build_model(cfg: RunConfig) -> mech_mod.MechanicalSystem:
    if "file" in cfg.model:
        return mech_mod.load_system(cfg.model["file"])
    params = dict(cfg.model.get("params", {}))
    try:
        return _BUILTINS[cfg.model["builtin"]](**params)
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from None


def amplitude_specs(cfg: RunConfig, mech: mech_mod.MechanicalSystem) -> list:
    specs = []
    for i, a in enumerate(cfg.amplitudes):
        idx = [mech_mod.beam_tip_index(mech) if v == "tip" else v for v in np.atleast_1d(a["indices"]).tolist()]
        try:
            spec = AmplitudeSpec(str(a["kind"]), tuple(int(v) for v in idx), a.get("Q"), a.get("name", f"A{i}"))
            spec.check(2 * mech.n)
        except ValueError as exc:
            raise ConfigError(f"amplitudes[{i}]", str(exc)) from None
        specs.append(spec)
    return specs


def step_control(cfg: RunConfig, **defaults) -> StepControl:
    opts = {**defaults, **cfg.continuation}
    opts.pop("R0", None)
    try:
        return StepControl(**opts)
    except TypeError as exc:
        raise ConfigError("continuation", str(exc)) from None


def _event_record(ev, monitors: dict) -> dict:
    rec = {"kind": ev.kind, "label": ev.label}
    rec.update({k: float(v) for k, v in monitors.items()})
    return rec


class Pipeline:
    """Shared state of one command run (model, ROM, outputs, summary)."""

    def __init__(self, cfg: RunConfig, out_dir, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, int(threads))
        self.summary = {"config": cfg.to_dict(), "timings": {}, "peaks": [], "events": [], "warnings": [],
                        "artifacts": []}
        self._mech = self._fos = self._ssm = None

    def _timed(self, label, fn, *args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        self.summary["timings"][label] = self.summary["timings"].get(label, 0.0) + time.perf_counter() - t0
        return res

    def warn(self, message: str) -> None:
        log.warning(message)
        self.summary["warnings"].append(message)

    def artifact(self, path) -> None:
        self.summary["artifacts"].append(str(Path(path).name))

    @property
    def mech(self):
        if self._mech is None:
            self._mech = self._timed("model", build_model, self.cfg)
        return self._mech

    @property
    def fos(self):
        if self._fos is None:
            self._fos = mech_mod.assemble_first_order(self.mech)
        return self._fos

    @property
    def ssm(self):
        if self._ssm is None:
            self._ssm = self._timed("ssm", compute_autonomous_ssm, self.fos, self.cfg.master_modes, self.cfg.order)
        return self._ssm

    @property
    def specs(self):
        return amplitude_specs(self.cfg, self.mech)

    def write_summary(self) -> Path:
        path = self.out / "summary.json"
        path.write_text(json.dumps(self.summary, indent=2, sort_keys=True, default=str))
        return path


def ti_adequacy(ssm, fos, spec: AmplitudeSpec, Omega_bounds, eps: float, samples: int = 5) -> dict:
    """Largest relative TI-vs-TV amplitude gap over a few forcing frequencies."""
    from .frs import amplitude_value

    gaps = []
    for Om in np.linspace(*Omega_bounds, samples):
        s = find_fixed_point(ssm, float(Om), eps).state
        a_ti = amplitude_value(spec, ssm, s, "TI", None, fos)
        a_tv = amplitude_value(spec, ssm, s, "TV", None, fos)
        gaps.append(abs(a_ti - a_tv) / max(abs(a_tv), 1e-300))
    return {"Omega": np.linspace(*Omega_bounds, samples).tolist(), "gap": gaps, "max_gap": float(max(gaps))}


def _preflight(pipe: Pipeline, threshold: float = 0.05) -> None:
    cfg = pipe.cfg
    if cfg.mode != "TI":
        return
    spec = pipe.specs[0]
    report = pipe._timed("preflight", ti_adequacy, pipe.ssm, pipe.fos, spec, cfg.Omega_bounds, cfg.eps_bounds[1])
    pipe.summary["ti_adequacy"] = report
    if report["max_gap"] > threshold:
        pipe.warn(f"TI lift deviates from TV by {100 * report['max_gap']:.1f}% (> {100 * threshold:.0f}%); "
                  "consider mode 'TV'")


# ----------------------------------------------------------------- commands
def cmd_ssm(pipe: Pipeline) -> None:
    ssm = pipe.ssm
    path = pipe.out / "rom.json"
    save_rom(ssm, path)
    pipe.artifact(path)
    pipe.summary["ssm"] = {"order": ssm.order, "m": ssm.m, "N": ssm.N,
                           "lambda_E": [[float(v.real), float(v.imag)] for v in ssm.lambda_E]}


def _eps_list(cfg: RunConfig) -> list:
    return list(cfg.frc_eps) or [cfg.eps_bounds[1]]


def cmd_frc(pipe: Pipeline) -> None:
    cfg, spec = pipe.cfg, pipe.specs[0]
    ssm, fos = pipe.ssm, pipe.fos
    ctrl = step_control(cfg, h0=0.01, h_max=0.05, max_steps=5000)

    def run(eps):
        return frc_slice(ssm, fos, spec, eps, cfg.Omega_bounds, mode=cfg.mode, ctrl=ctrl)

    with ThreadPoolExecutor(pipe.threads) as pool:
        frcs = pipe._timed("frc", lambda: list(pool.map(run, _eps_list(cfg))))
    for frc in frcs:
        _record_curve(pipe, frc, f"frc_eps{frc.eps:.6g}.csv", frc.branch.zp)


def _record_curve(pipe, frc, name, zp):
    path = pipe.out / name
    frc.to_csv(path)
    pipe.artifact(path)
    Om, A = frc.peak()
    pipe.summary["peaks"].append({"eps": frc.eps, "Omega": Om, "amplitude": A, "file": name})
    spec_name = pipe.specs[0].name
    for ev in frc.events:
        pipe.summary["events"].append(_event_record(ev, {
            "eps": frc.eps, "Omega": zp.monitor("Omega", ev.u), spec_name: zp.monitor(spec_name, ev.u)}))


def cmd_oracle_frc(pipe: Pipeline) -> None:
    cfg, spec, fos = pipe.cfg, pipe.specs[0], pipe.fos
    scheme = CollocationScheme(int(cfg.collocation.get("degree", 4)), int(cfg.collocation.get("intervals", 50)))

    def run(eps):
        return frc_full(fos, eps, cfg.Omega_bounds, spec, scheme=scheme)

    with ThreadPoolExecutor(pipe.threads) as pool:
        frcs = pipe._timed("oracle-frc", lambda: list(pool.map(run, _eps_list(cfg))))
    for frc in frcs:
        _record_curve(pipe, frc, f"oracle_frc_eps{frc.eps:.6g}.csv", frc.branch.zp)


def cmd_frs(pipe: Pipeline) -> None:
    cfg, specs = pipe.cfg, pipe.specs
    _preflight(pipe)
    ssm, fos = pipe.ssm, pipe.fos
    method = cfg.frs.get("method", "analytic" if ssm.m == 1 else "atlas")
    if method == "analytic":
        if ssm.m != 1:
            raise ConfigError("frs.method", "the analytic surface needs a single master mode pair")
        rho_max = float(cfg.frs.get("rho_max", _rho_max(ssm, cfg)))
        rho = np.linspace(0.0, rho_max, int(cfg.frs.get("rho_samples", 201)))[1:]
        eps = np.linspace(*cfg.eps_bounds, int(cfg.frs.get("eps_samples", 41)))
        mesh = pipe._timed("frs", analytic_frs_m1, ssm, rho, eps, cfg.Omega_bounds, specs, cfg.mode, fos)
    elif method == "atlas":
        mesh = pipe._timed("frs", numeric_frs, ssm, fos, specs, cfg.Omega_bounds, cfg.eps_bounds, cfg.mode,
                           float(cfg.continuation.get("R0", 0.05)))
        atlas = getattr(mesh, "atlas", None)
        if atlas is not None:
            pipe.summary["atlas"] = {"charts": len(atlas.charts), "termination": atlas.termination}
    else:
        raise ConfigError("frs.method", "must be 'analytic' or 'atlas'")
    for fmt in cfg.output.get("mesh_formats", ["json", "obj"]):
        path = export_mesh(mesh, pipe.out / f"frs.{fmt}", fmt, specs[0].name)
        pipe.artifact(path)
    amps = mesh.amplitudes[specs[0].name]
    k = int(np.argmax(amps))
    pipe.summary["peaks"].append({"eps": float(mesh.eps[k]), "Omega": float(mesh.Omega[k]),
                                  "amplitude": float(amps[k])})
    pipe.summary["frs"] = {"vertices": mesh.n_vertices, "faces": int(len(mesh.faces)), "method": method}


def _rho_max(ssm, cfg) -> float:
    """Amplitude of the largest fixed point over the window, with headroom."""
    lo, hi = cfg.Omega_bounds
    best = 0.0
    for Om in np.linspace(lo, hi, 9):
        s = find_fixed_point(ssm, float(Om), cfg.eps_bounds[1]).state
        best = max(best, float(np.abs(s.q).max()))
    return 3.0 * best


def cmd_ridge(pipe: Pipeline) -> None:
    cfg = pipe.cfg
    rc = cfg.ridge
    pipeline = str(rc.get("pipeline", "L2")).upper()
    spec = next((s for s in pipe.specs if s.kind == pipeline), None)
    if spec is None:
        raise ConfigError("amplitudes", f"the {pipeline} ridge pipeline needs an amplitude of kind {pipeline}")
    _preflight(pipe)
    ssm, fos = pipe.ssm, pipe.fos
    eps0_list = [float(e) for e in np.atleast_1d(rc.get("eps0", cfg.eps_bounds[1]))]
    ctrl = step_control(cfg, h0=0.01, h_max=0.05, max_steps=4000)
    curves, merges = [], []
    t0 = time.perf_counter()
    if pipeline == "L2":
        zp = build_fonc_L2(ssm, spec, cfg.mode, fos,
                           scale=default_scale(ssm, spec, cfg.Omega_bounds, cfg.eps_bounds, mode=cfg.mode, fos=fos))
        for eps0 in eps0_list:
            res = run_successive_L2(zp, eps0, cfg.Omega_bounds, cfg.eps_bounds, ctrl=ctrl, existing=curves)
            curves += res.curves
            merges += simple_bifurcation_eps(res)
            for note in res.notes:
                pipe.warn(note)
    else:
        zp = build_fonc_opt(ssm, spec, cfg.mode, fos,
                            scale=default_scale(ssm, spec, cfg.Omega_bounds, cfg.eps_bounds, with_time=True,
                                                mode=cfg.mode, fos=fos))
        Omega0 = float(rc.get("Omega0", 0.5 * sum(cfg.Omega_bounds)))
        for eps0 in eps0_list:
            res = run_successive_opt(zp, eps0, Omega0, cfg.Omega_bounds, cfg.eps_bounds, ctrl=ctrl)
            curves += res.curves
            merges += simple_bifurcation_eps(res)
            for note in res.notes:
                pipe.warn(note)
    pipe.summary["timings"]["ridge"] = time.perf_counter() - t0
    records = []
    for i, c in enumerate(curves):
        name = f"ridge_{i}_{c.kind}.csv"
        c.to_csv(pipe.out / name)
        pipe.artifact(pipe.out / name)
        k = int(np.argmax(c.amplitude))
        records.append({"file": name, "kind": c.kind, "points": len(c), "termination": c.termination,
                        "eps_range": [float(c.eps.min()), float(c.eps.max())],
                        "Omega_range": [float(c.Omega.min()), float(c.Omega.max())]})
        pipe.summary["peaks"].append({"eps": float(c.eps[k]), "Omega": float(c.Omega[k]),
                                      "amplitude": float(c.amplitude[k]), "file": name})
        for ev in c.events:
            pipe.summary["events"].append({"kind": ev.kind, "label": ev.label, "curve": name,
                                           **{k2: float(v) for k2, v in (ev.data or {}).items()
                                              if np.isscalar(v)}})
    pipe.summary["curves"] = records
    pipe.summary["simple_bifurcation_eps"] = sorted(set(merges))


_HANDLERS = {"ssm": cmd_ssm, "frc": cmd_frc, "oracle-frc": cmd_oracle_frc, "frs": cmd_frs, "ridge": cmd_ridge}


def convergence_sweep(cfg: RunConfig, orders, eps: float | None = None, threshold: float = 0.01) -> dict:
    """FRC peaks for several expansion orders and the smallest adequate order.

    The recommended order is the first whose peak amplitude differs from the
    next order's by at most ``threshold`` (relative).
    """
    orders = sorted(int(o) for o in orders)
    if len(orders) < 2:
        raise ValueError("need at least two orders")
    eps = cfg.eps_bounds[1] if eps is None else float(eps)
    fos = mech_mod.assemble_first_order(build_model(cfg))
    spec = amplitude_specs(cfg, fos.mech)[0]
    peaks = []
    for order in orders:
        ssm = compute_autonomous_ssm(fos, cfg.master_modes, order)
        frc = frc_slice(ssm, fos, spec, eps, cfg.Omega_bounds, mode=cfg.mode)
        peaks.append(frc.peak())
    deltas = [abs(b[1] - a[1]) / max(abs(b[1]), 1e-300) for a, b in zip(peaks, peaks[1:])]
    recommended = next((o for o, d in zip(orders, deltas) if d <= threshold), None)
    return {"orders": orders, "eps": eps, "peaks": [{"Omega": p[0], "amplitude": p[1]} for p in peaks],
            "deltas": deltas, "recommended": recommended, "threshold": threshold}


def run(cfg: RunConfig, command: str, out_dir, threads: int = 1, orders=None) -> dict:
    """Execute ``command`` and write ``summary.json``; returns the summary."""
    if command not in _HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}")
    pipe = Pipeline(cfg, out_dir, threads)
    pipe.summary["command"] = command
    t0 = time.perf_counter()
    _HANDLERS[command](pipe)
    if orders:
        pipe.summary["convergence"] = convergence_sweep(cfg, orders)
    pipe.summary["timings"]["total"] = time.perf_counter() - t0
    pipe.write_summary()
    return pipe.summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssmfrs", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out-dir", default="out", help="directory for artifacts and summary.json")
    p.add_argument("--threads", type=int, default=1, help="concurrent FRC slices")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized choices (overrides the config)")
    p.add_argument("--orders", default=None, help="comma-separated SSM orders for a convergence sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_json(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        np.random.seed(cfg.seed)
        orders = [int(o) for o in args.orders.split(",")] if args.orders else None
        summary = run(cfg, args.command, args.out_dir, args.threads, orders)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure in %s: %s", type(exc).__module__, exc)
        return EXIT_NUMERICAL
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps({"command": args.command, "peaks": summary["peaks"],
                      "total_seconds": round(summary["timings"]["total"], 3)}))
    return EXIT_OK
