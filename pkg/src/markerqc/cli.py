"""Command-line front end.

Usage::

    markerqc <command> [--config FILE] [--out DIR] [--recipe NAME] [--KEY VALUE ...]
    markerqc --recipe NAME [--out DIR]

Parameters come from built-in defaults, then the command's section of
an INI config file, then ``--KEY VALUE`` pairs.  All problems are
collected and reported together.  Exit status: 0 success, 1 physics
diagnostic (crossing, non-convergence), 2 configuration error.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import json
import logging
import math
import operator
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

OUT_ENV = "MARKERQC_OUT"
DEFAULT_OUT = "markerqc-out"

log = logging.getLogger("markerqc")


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class DiagnosticError(Exception):
    """Physics-level failure that still leaves a valid configuration."""


# -- value parsing ------------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_number(text: str) -> float:
    """Float literal or arithmetic expression in numbers and ``pi``."""
    try:
        return float(text)
    except ValueError:
        pass

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(text)

    text = text.strip().replace("π", "pi")
    # allow "2pi"
    if text.endswith("pi") and text[:-2].replace(".", "", 1).isdigit():
        text = text[:-2] + "*pi"
    try:
        return float(ev(ast.parse(text, mode="eval")))
    except (SyntaxError, ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    default: Any
    kind: str  # float, int, bool, str, choice
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple = ()

    def parse(self, text):
        if not isinstance(text, str):
            return text
        if self.kind == "float":
            return parse_number(text)
        if self.kind == "int":
            value = parse_number(text)
            if value != int(value):
                raise ValueError(f"not an integer: {text!r}")
            return int(value)
        if self.kind == "bool":
            return parse_bool(text)
        return text.strip()


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _fl(default, check=None, rule=""):
    return Param(default, "float", check, rule)


def _int(default, check=None, rule=""):
    return Param(default, "int", check, rule)


def _choice(default, *choices):
    return Param(default, "choice", None, f"one of {', '.join(choices)}", choices)


COMMON = {"species": _choice("Rb", "Rb", "Na")}

SCHEMAS: dict[str, dict[str, Param]] = {
    "bands": {
        "V": _fl(100.0, _nonneg, "must be >= 0"),
        "u1": _fl(0.0, lambda x: 0 <= x <= 1, "must lie in [0, 1]"),
        "u2": _fl(0.0, lambda x: -1 <= x <= 1, "must lie in [-1, 1]"),
        "sigma": _int(1, lambda x: x in (-1, 1), "must be +1 or -1"),
        "l": _int(0, lambda x: x in (0, 1), "must be 0 or 1"),
        "M": _int(32, lambda x: x >= 2 and x % 2 == 0, "must be an even integer >= 2"),
        "n_bands": _int(4, lambda x: x >= 1, "must be >= 1"),
        "cutoff": _int(64, lambda x: x >= 16, "must be >= 16"),
        "wannier": Param(False, "bool"),
    },
    "transport": {
        "V": _fl(100.0, lambda x: x >= 50, "must be >= 50 (deep lattice)"),
        "T": _fl(20.0, _pos, "must be > 0"),
        "fast": _fl(0.5, _pos, "must be > 0"),
        "u1_peak": _fl(0.9978, lambda x: 0 <= x <= 1, "must lie in [0, 1]"),
        "u2_t1": _fl(0.3048, lambda x: -1 <= x <= 1, "must lie in [-1, 1]"),
        "u2_t2": _fl(0.1326, lambda x: -1 <= x <= 1, "must lie in [-1, 1]"),
        "u2_t3": _fl(0.0513, lambda x: -1 <= x <= 1, "must lie in [-1, 1]"),
        "direction": _choice("right", "right", "left"),
        "dt": _fl(1e-3, _pos, "must be > 0"),
        "points_per_period": _int(256, lambda x: x >= 32, "must be >= 32"),
        "periods": _int(8, lambda x: x >= 4, "must be >= 4"),
        "snapshots": Param(False, "bool"),
    },
    "optimize-transport": {
        "V": _fl(100.0, lambda x: x >= 50, "must be >= 50 (deep lattice)"),
        "T": _fl(5.0, _pos, "must be > 0"),
        "fast": _fl(0.5, _pos, "must be > 0"),
        "dt": _fl(1e-3, _pos, "must be > 0"),
        "points_per_period": _int(256, lambda x: x >= 32, "must be >= 32"),
        "periods": _int(8, lambda x: x >= 4, "must be >= 4"),
        "max_iter": _int(500, lambda x: x >= 1, "must be >= 1"),
        "threshold": _fl(1e-4, _pos, "must be > 0"),
        "lam": _fl(0.0, _nonneg, "must be >= 0 (0 selects it automatically)"),
        "direction": _choice("right", "right", "left"),
    },
    "feshbach-spectra": {
        "nu": _fl(1e5, _pos, "must be > 0 (Hz)"),
        "gamma": _fl(1.0, lambda x: x >= 1, "must be >= 1"),
        "preset": Param("calibrated", "str"),
        "presets_file": Param("", "str"),
        "n_levels": _int(5, lambda x: x >= 2, "must be >= 2"),
        "B_min": _fl(float("nan")),
        "B_max": _fl(float("nan")),
        "n_B": _int(401, lambda x: x >= 2, "must be >= 2"),
    },
    "feshbach-ramp": {
        "nu": _fl(1e5, _pos, "must be > 0 (Hz)"),
        "gamma": _fl(1.0, lambda x: x >= 1, "must be >= 1"),
        "preset": Param("calibrated", "str"),
        "presets_file": Param("", "str"),
        "n_levels": _int(5, lambda x: x >= 2, "must be >= 2"),
        "B_start": _fl(float("nan")),
        "B_end": _fl(float("nan")),
        "rate": _fl(5.0, _pos, "must be > 0 (G/ms)"),
        "dt": _fl(1e-3, _pos, "must be > 0"),
        "level": _int(0, _nonneg, "must be >= 0 (trap level)"),
        "samples": _int(401, lambda x: x >= 2, "must be >= 2"),
    },
    "gate": {
        "mode": _choice("cphase", "cphase", "swap"),
        "phi": _fl(float("nan")),
        "V0": _fl(1.0, _pos, "must be > 0"),
        "omega2": _fl(0.0, _nonneg, "must be >= 0"),
        "tau": _fl(float("nan")),
        "full": Param(False, "bool"),
        "n_steps": _int(4000, lambda x: x >= 1, "must be >= 1"),
    },
    "gate-ramp-optimize": {
        "nu": _fl(1e5, _pos, "must be > 0 (Hz)"),
        "gamma": _fl(10.0, lambda x: x >= 1, "must be >= 1"),
        "preset": Param("00", "str"),
        "presets_file": Param("", "str"),
        "n_levels": _int(5, lambda x: x >= 2, "must be >= 2"),
        "phi": _fl(math.pi),
        "duration": _fl(1.0, _pos, "must be > 0 (units of 1/nu)"),
        "n_steps": _int(1000, lambda x: x >= 10, "must be >= 10"),
        "eps_off": _fl(20.0, _pos, "must be > 0 (h nu)"),
        "max_iter": _int(300, lambda x: x >= 1, "must be >= 1"),
        "threshold": _fl(1e-7, _pos, "must be > 0"),
    },
}

RECIPES = {
    "fig3": ("transport", {"snapshots": "true"}),
    "fig5a": ("transport", {}),
    "fig7": ("optimize-transport", {}),
    "fig9": ("feshbach-spectra", {}),
    "fig10": ("feshbach-spectra", {"preset": "00"}),
    "fig11": ("gate-ramp-optimize", {}),
}


@dataclass
class Scenario:
    command: str
    params: dict[str, Any]
    out: Path
    recipe: str | None = None


def validate(command: str, config_text: str = "", overrides: dict[str, str] | None = None,
             out: str | None = None, recipe: str | None = None) -> Scenario:
    """Merge defaults, config text and overrides into a checked scenario.

    Raises:
        ConfigError: listing every offending key.
    """
    errors: list[str] = []
    if command not in SCHEMAS:
        raise ConfigError([f"command: unknown command {command!r}; known: {', '.join(SCHEMAS)}"])
    schema = {**COMMON, **SCHEMAS[command]}
    raw: dict[str, Any] = {}
    if config_text.strip():
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(config_text)
        except configparser.Error as exc:
            raise ConfigError([f"config: cannot parse ({exc.__class__.__name__})"]) from None
        for section in parser.sections():
            if section not in ("general", command) and section not in SCHEMAS:
                errors.append(f"[{section}]: unknown section")
        for section in ("general", command):
            if parser.has_section(section):
                raw.update(parser[section])
    if recipe is not None:
        if recipe not in RECIPES:
            errors.append(f"recipe: unknown recipe {recipe!r}; known: {', '.join(RECIPES)}")
        else:
            raw.update(RECIPES[recipe][1])
    raw.update(overrides or {})
    params = {k: p.default for k, p in schema.items()}
    for key, text in raw.items():
        if key not in schema:
            errors.append(f"{key}: unknown key for {command}")
            continue
        p = schema[key]
        try:
            value = p.parse(text)
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
            continue
        if p.kind == "choice" and value not in p.choices:
            errors.append(f"{key}: {value!r} is not {p.rule}")
            continue
        if p.check is not None and not p.check(value):
            errors.append(f"{key}: {value!r} {p.rule}")
            continue
        params[key] = value
    if errors:
        raise ConfigError(errors)
    out_dir = Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    return Scenario(command, params, out_dir, recipe)


# -- output helpers ------------------------------------------------------------

def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _clean(obj):
    """JSON-safe copy: numpy scalars to float, NaN to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- commands ------------------------------------------------------------------

def run_bands(sc: Scenario) -> dict:
    from .bands import band_structure, wannier, wannier_to_csv
    from .lattice import LatticeControls
    from .tdse import SpatialGrid

    p = sc.params
    c = LatticeControls(p["u1"], p["u2"], p["sigma"], p["l"], p["V"])
    bs = band_structure(c, p["M"], p["n_bands"], p["cutoff"])
    files = [bs.to_csv(sc.out / "bands.csv")]
    if p["wannier"]:
        grid = SpatialGrid.lattice(periods=8)
        for n in range(min(p["n_bands"], 2)):
            files.append(wannier_to_csv(sc.out / f"wannier_band{n}.csv", wannier(bs, n, 0.5 * math.pi, grid)))
    k0 = int(np.argmin(np.abs(bs.ks)))
    return {"lattice_constant": bs.a, "energies_k0": bs.energies[k0].tolist(),
            "flatness": bs.flatness().tolist(), "files": files}


def _profile(p):
    from .transport import AdiabaticProfile

    return AdiabaticProfile(p["T"], p["fast"], (0.0, p.get("u1_peak", 0.9978), 0.0),
                            (p.get("u2_t1", 0.3048), p.get("u2_t2", 0.1326), p.get("u2_t3", 0.0513)))


def run_transport(sc: Scenario) -> dict:
    from .tdse import GridWavefunction, SpatialGrid, propagate, write_snapshot_csv
    from .transport import (LevelCrossingError, build_adiabatic_schedule, level_scan,
                            simulate_transport, step_config, transport_states)
    from .units import lattice_time_to_seconds

    p = sc.params
    sigma, l, _ = step_config(p["direction"], "ground->excited")
    try:
        sched = build_adiabatic_schedule(_profile(p), p["V"], sigma, l, check_levels=False)
        scan = level_scan(sched)
    except LevelCrossingError as exc:
        raise DiagnosticError(f"level crossing at t = {exc.time:.4g}: {exc}") from None
    grid = SpatialGrid.lattice(periods=p["periods"], points_per_period=p["points_per_period"])
    states = transport_states(p["V"], grid, p["direction"])
    res = simulate_transport(sched, states, p["dt"])
    res.min_gap = scan.min_gap
    files = [sched.to_csv(sc.out / "schedule.csv"), scan.to_csv(sc.out / "levels.csv")]
    if p["snapshots"]:
        marks = list(sched.breakpoints)
        _, snaps = propagate(states.stacked_initial(), sched, grid, p["dt"], snapshots=marks[1:])
        snaps[marks[0]] = states.stacked_initial()
        for i, t in enumerate(marks):
            for j, who in enumerate(("marker", "register")):
                files.append(write_snapshot_csv(sc.out / f"snapshot_t{i}_{who}.csv",
                                                GridWavefunction(snaps[t][:, j], grid, t)))
    summary = res.summary(sched.breakpoints)
    summary["min_gap_time"] = scan.min_gap_time
    summary["T_seconds"] = lattice_time_to_seconds(res.T, p["species"])
    files.append(_write_json(sc.out / "fidelity.json", _clean(summary)))
    return {**summary, "files": files}


def run_optimize_transport(sc: Scenario) -> dict:
    from .control import OptimizerConfig, optimize, transport_setup, write_history_csv
    from .tdse import SpatialGrid
    from .transport import build_adiabatic_schedule, step_config, transport_states
    from .units import lattice_time_to_seconds

    p = sc.params
    sigma, l, _ = step_config(p["direction"], "ground->excited")
    sched = build_adiabatic_schedule(_profile(p), p["V"], sigma, l, check_levels=False)
    grid = SpatialGrid.lattice(periods=p["periods"], points_per_period=p["points_per_period"])
    setup = transport_setup(sched, transport_states(p["V"], grid, p["direction"]), p["dt"])
    cfg = OptimizerConfig(max_iter=p["max_iter"], threshold=p["threshold"], lam=p["lam"] or None)
    res = optimize(setup.problem, setup.initial_controls, cfg)
    best = setup.to_schedule(res.controls)
    files = [best.to_csv(sc.out / "optimized_schedule.csv"),
             write_history_csv(sc.out / "history.csv", res)]
    summary = {"F_M": res.fidelities[0], "F_R": res.fidelities[1], "objective": res.objective,
               "iterations": res.iterations, "converged": res.converged, "lambda": res.lam,
               "T": p["T"], "T_seconds": lattice_time_to_seconds(p["T"], p["species"]),
               "dt": setup.problem.dt, "N": grid.n}
    files.append(_write_json(sc.out / "fidelity.json", _clean(summary)))
    if not res.converged:
        raise DiagnosticError(f"optimizer stopped at objective {res.objective:.3g} "
                              f"after {res.iterations} iterations", )
    return {**summary, "files": files}


def _resonance(p):
    from .feshbach import load_presets

    presets = load_presets(p["presets_file"] or None)
    if p["preset"] not in presets:
        raise ConfigError([f"preset: unknown preset {p['preset']!r}; known: {', '.join(sorted(presets))}"])
    return presets[p["preset"]]


def run_feshbach_spectra(sc: Scenario) -> dict:
    from .feshbach import (TrapSpec, build_level_model, linear_field_ramp, load_presets,
                           ramp_dynamics, scattering_length, spectra)

    p = sc.params
    res = _resonance(p)
    trap = TrapSpec(p["nu"], p["gamma"], p["species"])
    model = build_level_model(p["n_levels"], trap, res)
    # field window covering all diabatic crossings with a margin
    span = (model.energies[-1] + 4 * np.max(np.abs(model.couplings)) + 2) * trap.nu / abs(res.slope)
    lo = p["B_min"] if not math.isnan(p["B_min"]) else res.B_res - 0.25 * span
    hi = p["B_max"] if not math.isnan(p["B_max"]) else res.B_res + span
    fields = np.linspace(lo, hi, p["n_B"])
    spec = spectra(model, fields)
    files = [spec.to_csv(sc.out / "spectra.csv")]
    out = {"couplings_hnu": model.couplings.tolist(), "level_energies_hnu": model.energies.tolist(),
           "crossing_gaps": [g for _, g in spec.crossing_gaps()], "B_range": [lo, hi]}
    if sc.recipe == "fig9":
        t, eps = linear_field_ramp(model, hi, lo, 5.0)
        psi0 = np.zeros(model.dim)
        psi0[1] = 1.0
        ramp = ramp_dynamics(model, t, eps, psi0)
        files.append(ramp.to_csv(sc.out / "ramp.csv"))
        out["final_populations"] = ramp.populations[-1].tolist()
    if sc.recipe == "fig10":
        path = sc.out / "scattering_length.csv"
        presets = load_presets(p["presets_file"] or None)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["B", "channel", "a_bohr"])
            for name in ("0x", "00"):
                r = presets[name]
                Bs = np.linspace(380.0, 412.0, 3201)
                Bs = Bs[np.abs(Bs - r.B_res) > 1e-9]
                for B, a in zip(Bs, scattering_length(Bs, r)):
                    w.writerow([repr(float(B)), name, repr(float(a))])
        files.append(path)
    files.append(_write_json(sc.out / "spectra.json", _clean(out)))
    return {**out, "files": files}


def run_feshbach_ramp(sc: Scenario) -> dict:
    from .feshbach import TrapSpec, build_level_model, linear_field_ramp, ramp_dynamics

    p = sc.params
    res = _resonance(p)
    trap = TrapSpec(p["nu"], p["gamma"], p["species"])
    model = build_level_model(p["n_levels"], trap, res)
    if p["level"] >= p["n_levels"]:
        raise ConfigError([f"level: {p['level']} exceeds n_levels - 1 = {p['n_levels'] - 1}"])
    span = (model.energies[-1] + 4 * np.max(np.abs(model.couplings)) + 2) * trap.nu / abs(res.slope)
    B0 = p["B_start"] if not math.isnan(p["B_start"]) else res.B_res + span
    B1 = p["B_end"] if not math.isnan(p["B_end"]) else res.B_res - 0.25 * span
    t, eps = linear_field_ramp(model, B0, B1, p["rate"], p["dt"])
    psi0 = np.zeros(model.dim)
    psi0[1 + p["level"]] = 1.0
    ramp = ramp_dynamics(model, t, eps, psi0)
    keep = np.unique(np.linspace(0, len(t) - 1, p["samples"]).astype(int))
    ramp.times, ramp.populations = ramp.times[keep], ramp.populations[keep]
    files = [ramp.to_csv(sc.out / "ramp.csv")]
    out = {"final_populations": ramp.populations[-1].tolist(), "duration_s": float(t[-1] / trap.nu),
           "molecular_fraction": float(ramp.populations[-1, 0])}
    files.append(_write_json(sc.out / "ramp.json", _clean(out)))
    return {**out, "files": files}


def run_gate(sc: Scenario) -> dict:
    from .gates import (CommensurabilityError, TwoQubitGateSpec, gate_truth_table, ideal_swap,
                        simulate_full_gate, swap_settings)

    p = sc.params
    tau = None if math.isnan(p["tau"]) else p["tau"]
    if math.isnan(p["phi"]):
        # the swap pattern needs a trivial ramp phase, cphase defaults to pi
        p["phi"] = math.pi if p["mode"] == "cphase" else 0.0
    spec = TwoQubitGateSpec(p["omega2"], p["V0"], p["phi"], tau)
    errors = []
    if p["mode"] == "cphase" and p["omega2"] != 0:
        errors.append("omega2: cphase mode needs omega2 = 0")
    if p["mode"] == "cphase" and p["full"]:
        errors.append("full: the five-level check applies to swap mode; "
                      "the C-phase ramp is simulated by gate-ramp-optimize")
    if errors:
        raise ConfigError(errors)
    try:
        res = gate_truth_table(spec, p["mode"])
    except CommensurabilityError as exc:
        raise ConfigError([f"omega2: {exc}"]) from None
    out = res.to_dict()
    if p["full"] and p["mode"] == "swap":
        _, _, tau = swap_settings(spec)
        full = simulate_full_gate(p["V0"], tau, p["omega2"], 0.0, n_steps=p["n_steps"],
                                  phi=p["phi"], target=ideal_swap())
        out["full_model"] = full.to_dict()
    files = [_write_json(sc.out / "gate.json", _clean(out))]
    diag = np.diag(res.matrix)
    return {"mode": p["mode"], "diagonal_re": diag.real.round(12).tolist(),
            "diagonal_im": diag.imag.round(12).tolist(), "infidelity": res.infidelity, "files": files}


def run_gate_ramp_optimize(sc: Scenario) -> dict:
    from .control import OptimizerConfig, write_history_csv
    from .feshbach import TrapSpec, build_level_model
    from .gates import optimize_ramp

    p = sc.params
    res_params = _resonance(p)
    model = build_level_model(p["n_levels"], TrapSpec(p["nu"], p["gamma"], p["species"]), res_params)
    cfg = OptimizerConfig(max_iter=p["max_iter"], threshold=p["threshold"], lam_bracket=(0.03, 0.1, 0.3))
    try:
        opt = optimize_ramp(model, p["phi"], p["duration"], p["n_steps"], p["eps_off"], cfg)
    except RuntimeError as exc:
        raise DiagnosticError(str(exc)) from None
    files = [opt.to_csv(sc.out / "ramp.csv"),
             write_history_csv(sc.out / "history.csv", opt.result, labels=("F",))]
    out = {"infidelity": opt.infidelity, "phase": opt.phase, "phase_error": opt.phase_error,
           "iterations": opt.result.iterations, "V0_hnu": float(model.couplings[0]),
           "duration_s": p["duration"] / p["nu"]}
    files.append(_write_json(sc.out / "gate_ramp.json", _clean(out)))
    return {**out, "files": files}


COMMANDS = {
    "bands": run_bands,
    "transport": run_transport,
    "optimize-transport": run_optimize_transport,
    "feshbach-spectra": run_feshbach_spectra,
    "feshbach-ramp": run_feshbach_ramp,
    "gate": run_gate,
    "gate-ramp-optimize": run_gate_ramp_optimize,
}


def run(sc: Scenario) -> dict:
    sc.out.mkdir(parents=True, exist_ok=True)
    result = COMMANDS[sc.command](sc)
    result["files"] = [str(Path(f)) for f in result.get("files", [])]
    return result


# -- argument handling --------------------------------------------------------

def _split_overrides(extra: list[str]) -> tuple[dict[str, str], list[str]]:
    out, errors = {}, []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            errors.append(f"{tok}: unexpected argument")
            i += 1
            continue
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            val = extra[i + 1]
            i += 2
        else:
            errors.append(f"{key}: missing value")
            i += 1
            continue
        out[key.replace("-", "_") if key.replace("-", "_") in _ALL_KEYS else key] = val
    return out, errors


_ALL_KEYS = {k for s in SCHEMAS.values() for k in s} | set(COMMON)

_OWN_VALUED = ("--config", "--out", "--recipe")
_OWN_FLAGS = ("-v", "--verbose", "-h", "--help")


def _partition(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate parser options and the command from ``--KEY VALUE`` overrides.

    Done before argparse so that an override value is never taken for
    the positional command.
    """
    known, extra = [], []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _OWN_VALUED:
            known += argv[i:i + 2]
            i += 2
        elif tok in _OWN_FLAGS or tok.split("=", 1)[0] in _OWN_VALUED or not tok.startswith("--"):
            known.append(tok)
            i += 1
        elif "=" not in tok and i + 1 < len(argv) and not argv[i + 1].startswith("--"):
            extra += argv[i:i + 2]
            i += 2
        else:
            extra.append(tok)
            i += 1
    return known, extra


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="markerqc", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="commands: " + ", ".join(COMMANDS) + "\nrecipes: " + ", ".join(RECIPES))
    ap.add_argument("command", nargs="?", help="simulation to run")
    ap.add_argument("--config", help="INI file with [general] and per-command sections")
    ap.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    ap.add_argument("--recipe", help="named figure recipe")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    known, extra = _partition(sys.argv[1:] if argv is None else list(argv))
    args, stray = ap.parse_known_args(known)
    extra = stray + extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    errors: list[str] = []
    command = args.command
    if command is None and args.recipe in RECIPES:
        command = RECIPES[args.recipe][0]
    if args.recipe is not None and args.recipe not in RECIPES:
        errors.append(f"recipe: unknown recipe {args.recipe!r}; known: {', '.join(RECIPES)}")
    elif command is None:
        errors.append("command: missing (give a command or --recipe)")
    elif args.recipe in RECIPES and RECIPES[args.recipe][0] != command:
        errors.append(f"recipe: {args.recipe} belongs to command {RECIPES[args.recipe][0]}")
    overrides, more = _split_overrides(extra)
    errors += more
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            errors.append(f"config: cannot read {args.config} ({exc.strerror})")
    try:
        if errors:
            raise ConfigError(errors)
        sc = validate(command, text, overrides, args.out, args.recipe)
        result = run(sc)
    except ConfigError as exc:
        print(json.dumps({"status": "config-error", "errors": exc.errors}), flush=True)
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except DiagnosticError as exc:
        print(json.dumps({"command": command, "status": "diagnostic", "message": str(exc)}), flush=True)
        return 1
    print(json.dumps(_clean({"command": command, "status": "ok", **result}), sort_keys=True), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
