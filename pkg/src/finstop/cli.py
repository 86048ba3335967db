"""Command-line runner: ``finstop <kind> --config <path> [--out <dir>]``.

Configs are JSON objects with a ``kind`` plus flat parameters (a nested
``grid`` object is merged in) and an optional ``thresholds`` object.
Exit codes: 0 when every check passes, 1 when a check fails, 2 on bad input.
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import acceptance
from . import diffusion as dif
from . import oscillation as osc
from . import relaxation as rel
from . import waves as wv
from .errors import FinstopError
from .io import TRANSFORM_CONVENTION, format_report, write_csv
from .ode_core import TimeGrid, control_residual, fundamental_solution, no_memory_deviation, stopping_check

KINDS = ("relax", "oscillate", "diffuse", "wave", "verify")


class ConfigError(ValueError):
    """All validation failures of one config."""

    def __init__(self, problems: List[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _pos(x):
    return x > 0


# key -> (required, default, check, description of the range)
_NUM = (int, float)
SCHEMAS: Dict[str, Dict[str, tuple]] = {
    "relax": {
        "n": (True, None, lambda v: v == "inf" or (isinstance(v, _NUM) and v >= 1 and int(v) == v),
              "a positive integer or 'inf'"),
        "T": (True, None, _pos, "> 0"),
        "step": (False, 1e-3, _pos, "> 0"),
        "t_end": (False, None, _pos, "> 0"),
    },
    "oscillate": {
        "omega0": (True, None, _pos, "> 0"),
        "tau0": (True, None, _pos, "> 0"),
        "T": (True, None, _pos, "> 0"),
        "phi": (False, 1.0, lambda v: True, "a number"),
        "psi": (False, 0.0, lambda v: True, "a number"),
        "step": (False, 1e-3, _pos, "> 0"),
        "t_end": (False, None, _pos, "> 0"),
    },
    "diffuse": {
        "n": (True, None, lambda v: v in ("inf", "classical") or (isinstance(v, _NUM) and v >= 1 and int(v) == v),
              "a positive integer, 'inf' or 'classical'"),
        "T": (True, None, _pos, "> 0"),
        "D0": (False, 1.0, _pos, "> 0"),
        "tau0": (False, 1.0, _pos, "> 0"),
        "front": (False, "capped", lambda v: v in ("capped", "sqrt"), "'capped' or 'sqrt'"),
        "t0": (False, 1.0, _pos, "> 0"),
        "x_min": (False, -6.0, lambda v: True, "a number"),
        "x_max": (False, 6.0, lambda v: True, "a number"),
        "dx": (False, 0.04, _pos, "> 0"),
        "t_min": (False, 0.5, _pos, "> 0"),
        "t_max": (False, 2.0, _pos, "> 0"),
        "dt": (False, 0.01, _pos, "> 0"),
        "refinements": (False, 3, lambda v: int(v) == v and v >= 1, "an integer >= 1"),
        "slices": (False, 20, lambda v: int(v) == v and v >= 1, "an integer >= 1"),
    },
    "wave": {
        "law": (True, None, lambda v: v in ("exponential", "cosine"), "'exponential' or 'cosine'"),
        "a0": (False, 2.0, _pos, "> 0"),
        "omega0": (False, 2.0, _pos, "> 0"),
        "T": (False, 10.0, _pos, "> 0"),
        "c0": (False, 1.0, _pos, "> 0"),
        "window": (False, 64.0, _pos, "> 0"),
        "dt": (False, 1.0 / 128, _pos, "> 0"),
        "radii": (False, [0.5, 1.0, 2.0], None, "positive numbers"),
    },
    "verify": {
        "criteria": (False, None, None, "criterion numbers 1-13"),
    },
}

DEFAULT_THRESHOLDS: Dict[str, float] = {
    "stop": 1e-6,
    "energy_tol": 1e-10,
    "no_memory": 1e-8,
    "normalization": 1e-9,
    "oscillator_stop": 1e-5,
    "wronskian": 1e-12,
    "control_residual": 1e-8,
    "mass": 1e-8,
    "residual_order": 1.8,
    "re_alpha_floor": -1e-12,
    "semigroup": 1e-6,
    "causality": 1e-8,
}


@dataclass
class ScenarioConfig:
    kind: str
    parameters: Dict[str, object]
    thresholds: Dict[str, float]
    output_dir: Optional[str] = None


@dataclass(frozen=True)
class CheckEntry:
    name: str
    measured: float
    threshold: float
    passed: bool


@dataclass
class RunReport:
    scenario: str
    checks: List[CheckEntry] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, measured, threshold, passed):
        self.checks.append(CheckEntry(name, float(measured), float(threshold), bool(passed)))

    def le(self, name, measured, threshold):
        self.add(name, measured, threshold, measured <= threshold)

    def text(self) -> str:
        items = {"scenario": self.scenario, "pass": str(self.passed).lower(), "convention": TRANSFORM_CONVENTION}
        for c in self.checks:
            items[f"check.{c.name}"] = (f"measured={c.measured:.6e} threshold={c.threshold:.6e} "
                                        f"pass={str(c.passed).lower()}")
        for i, a in enumerate(self.artifacts):
            items[f"artifact.{i}"] = a
        return format_report(items)


def _radii(v):
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    if not isinstance(v, (list, tuple)):
        v = [v]
    out = [float(x) for x in v]
    if not out or any(not r > 0 for r in out):
        raise ValueError("radii must be positive")
    return out


def _criteria(v):
    if v is None:
        return sorted(acceptance.CRITERIA)
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    if not isinstance(v, (list, tuple)):
        v = [v]
    out = [int(x) for x in v]
    if any(k not in acceptance.CRITERIA for k in out):
        raise ValueError("unknown criterion")
    return out


def parse_config(text: str) -> ScenarioConfig:
    """Validate a JSON config; every problem is collected before raising :class:`ConfigError`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError([f"kind: unknown kind {kind!r}, expected one of {', '.join(KINDS)}"])
    out_dir = doc.pop("output_dir", None)
    th_raw = doc.pop("thresholds", {}) or {}
    grid = doc.pop("grid", {}) or {}
    problems = []
    if not isinstance(grid, dict):
        problems.append("grid: must be an object")
        grid = {}
    doc.update(grid)
    schema = SCHEMAS[kind]
    params: Dict[str, object] = {}
    for key in sorted(set(doc) - set(schema)):
        problems.append(f"{key}: unknown key for kind {kind!r}")
    for key, (required, default, check, what) in schema.items():
        if key not in doc:
            if required:
                problems.append(f"{key}: missing required key")
            else:
                params[key] = default
            continue
        v = doc[key]
        try:
            if key == "radii":
                v = _radii(v)
            elif key == "criteria":
                v = _criteria(v)
            elif check is not None:
                if isinstance(v, bool) or not (isinstance(v, (int, float, str))):
                    raise ValueError
                if isinstance(v, float) and not math.isfinite(v):
                    raise ValueError
                if not check(v):
                    raise ValueError
        except (ValueError, TypeError):
            problems.append(f"{key}: out of range, expected {what}, got {doc[key]!r}")
            continue
        params[key] = v
    table = acceptance.DEFAULT_THRESHOLDS if kind == "verify" else DEFAULT_THRESHOLDS
    thresholds = dict(table)
    if not isinstance(th_raw, dict):
        problems.append("thresholds: must be an object")
        th_raw = {}
    for key, v in th_raw.items():
        if key not in table:
            problems.append(f"thresholds.{key}: unknown threshold")
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.append(f"thresholds.{key}: must be a number")
        else:
            thresholds[key] = float(v)
    for a, b in (("x_min", "x_max"), ("t_min", "t_max")):
        if a in params and b in params and isinstance(params[a], _NUM) and isinstance(params[b], _NUM):
            if not params[b] > params[a]:
                problems.append(f"{b}: out of range, must exceed {a}")
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(kind, params, thresholds, out_dir)


def _n(v):
    return math.inf if v == "inf" else int(v)


def _run_relax(cfg, out, rep):
    p, th = cfg.parameters, cfg.thresholds
    n, T = _n(p["n"]), float(p["T"])
    kernel = rel.varrho_n(n, T)
    ell = rel.control_ell_bump(T) if n == math.inf else rel.control_ell_poly(n, T)
    t_end = p["t_end"] or 1.6 * T
    A, rhs, grid, traj = acceptance.relaxation_trajectory(n, T, p["step"], t_end)
    times = grid.nodes
    meta = {"n": p["n"], "T": T, "step": grid.step, "convention": TRANSFORM_CONVENTION}
    rep.artifacts.append(str(kernel.to_csv(out / "rho.csv", times, meta)))
    rate = kernel.rate_function()
    inside = times[times < T]
    rep.artifacts.append(str(rate.to_csv(out / "rate.csv", inside[inside > 0], meta)))
    rep.artifacts.append(str(traj.to_csv(out / "trajectory.csv", meta)))
    rep.le("normalization_error", ell.normalization_error(), th["normalization"])
    rep.le("stop_after_T", stopping_check(traj, T, th["stop"]).max_abs_after_T, th["stop"])
    rep.le("trajectory_vs_kernel", float(np.max(np.abs(traj.values[:, 0] - kernel.value(times)))), th["stop"])
    er = rel.energy_monotone_check(rate, TimeGrid(0.0, T, p["step"]), th["energy_tol"])
    rep.add("energy_margin", er.min_margin, 0.0, er.passes)
    dev = no_memory_deviation(A, rhs, [1.0], 0.0, T / 2, grid, (T,))
    rep.le("no_memory", dev, th["no_memory"])


def _run_oscillate(cfg, out, rep):
    p, th = cfg.parameters, cfg.thresholds
    T = float(p["T"])
    params = osc.OscillatorParams(p["omega0"], p["tau0"], p["phi"], p["psi"])
    pair = osc.oscillation_controls(params, T)
    grid = TimeGrid(0.0, p["t_end"] or 1.6 * T, p["step"])
    traj, stop = osc.simulate_controlled_oscillator(params, pair, grid, th["stop"])
    meta = {"omega0": params.omega0, "tau0": params.tau0, "T": T, "step": grid.step,
            "convention": TRANSFORM_CONVENTION}
    rep.artifacts.append(str(traj.to_csv(out / "trajectory.csv", meta)))
    rep.artifacts.append(str(pair.to_csv(out / "controls.csv", grid.nodes, meta)))
    k = grid.index_of(T)
    rep.le("state_at_T", abs(traj.values[k, 0]) + abs(traj.derivatives[k, 0]), th["oscillator_stop"])
    rep.le("stop_after_T", stop.max_abs_after_T, th["stop"])
    b = osc.damped_basis(params)
    rep.le("wronskian", float(np.max(np.abs(b.wronskian(grid.nodes) - 1.0))), th["wronskian"])
    G = fundamental_solution(params.generator(), 0.0, grid)
    rep.le("control_residual", float(np.max(np.abs(control_residual(G, osc.control_matrix(pair), T)))),
           th["control_residual"])
    rhs = lambda t: np.array([0.0, -params.phi * pair.ell_phi(t) - params.psi * pair.ell_psi(t)])
    dev = no_memory_deviation(params.generator(), rhs, [params.phi, params.psi], 0.0, T / 2, grid, (T,))
    rep.le("no_memory", dev, th["no_memory"])


def _run_diffuse(cfg, out, rep):
    p, th = cfg.parameters, cfg.thresholds
    T, D0, tau0 = float(p["T"]), float(p["D0"]), float(p["tau0"])
    if p["n"] == "classical":
        kernel, ell = rel.classical_kernel(tau0), rel.ControlFunction.zero()
    else:
        n = _n(p["n"])
        kernel = rel.varrho_n(n, T)
        ell = rel.control_ell_bump(T) if n == math.inf else rel.control_ell_poly(n, T)
    if p["front"] == "capped":
        front = dif.front_radius_capped(D0, p["t0"], T)
    else:
        front = dif.front_radius_sqrt(D0, tau0, T)
    fld = dif.generalized_gaussian(kernel, front, T)
    grid = dif.SpaceTimeGrid(p["x_min"], p["x_max"], p["dx"], p["t_min"], p["t_max"], p["dt"])
    meta = {"n": p["n"], "T": T, "D0": D0, "front": p["front"], "dx": grid.dx, "dt": grid.dt,
            "convention": TRANSFORM_CONVENTION}
    rep.artifacts.append(str(fld.to_csv(out / "field.csv", grid.x, grid.t, meta)))
    slices = np.linspace(grid.t_min, grid.t_max, int(p["slices"]))
    rep.le("mass_error", max(abs(fld.mass(t) - 1.0) for t in slices), th["mass"])
    if fld.finite_front:
        leak = 0.0
        for t in slices:
            R = float(front.R(t))
            x = grid.x[np.abs(grid.x) >= R]
            if x.size:
                leak = max(leak, float(np.max(np.abs(fld.value(x, t)))))
        rep.le("field_outside_front", leak, 0.0)
    ctl = dif.diffusion_control_L(kernel, ell, front, D0, tau0, T)
    res = dif.pde_residual(fld, ctl, D0, grid, int(p["refinements"]))
    rep.add("residual_order", res.order_estimate, th["residual_order"], res.order_estimate >= th["residual_order"])
    rep.add("finest_residual", res.max_residual, math.inf, True)


def _run_wave(cfg, out, rep):
    p, th = cfg.parameters, cfg.thresholds
    grid = wv.FrequencyGrid.from_window(p["window"], p["dt"])
    if p["law"] == "exponential":
        a0 = float(p["a0"])
        K1 = wv.sample_causal(lambda t: np.exp(-a0 * t), grid)
        T_unit = None
    else:
        ck = osc.finite_stop_cosine_kernel(p["T"], p["a0"], p["omega0"])
        K1 = wv.sample_causal(ck.value, grid)
        T_unit = ck.support_end
    law = wv.attenuation_from_kernel(K1, grid)
    fam = wv.kernel_family(law, T_unit)
    radii = p["radii"]
    meta = {"law": p["law"], "a0": p["a0"], "omega0": p["omega0"], "T": p["T"]}
    rep.artifacts.append(str(law.to_csv(out / "law.csv", meta)))
    rep.artifacts.append(str(fam.to_csv(out / "kernel.csv", radii, meta)))
    rep.add("min_re_alpha", law.realpart_min, th["re_alpha_floor"], law.realpart_min >= th["re_alpha_floor"])
    for r in radii:
        rep.le(f"semigroup_r{r:g}", wv.semigroup_residual(fam, r, r), th["semigroup"])
    cols, order = {}, np.argsort(grid.times)
    cols["t"] = grid.times[order]
    for r in radii:
        tr = wv.spherical_wave_trace(fam, p["c0"], (r, 0.0, 0.0))
        cols[f"trace_r{r:g}"] = tr.values[order]
        rep.le(f"pre_arrival_r{r:g}", tr.pre_arrival_fraction(grid.dt), th["causality"])
    info = {"convention": TRANSFORM_CONVENTION, "n_samples": grid.n_samples, "dt": grid.dt, "c0": p["c0"]}
    info.update(meta)
    rep.artifacts.append(str(write_csv(out / "traces.csv", cols, info)))


def _run_verify(cfg, out, rep):
    results = acceptance.run_all(cfg.parameters["criteria"], cfg.thresholds)
    lines = []
    for r in results:
        lines.append(r.line())
        for c in r.checks:
            rep.add(f"c{r.number}.{c.name}", c.measured, c.threshold, c.passed)
            lines.append("    " + c.line())
    path = out / "acceptance.txt"
    path.write_text("\n".join(lines) + "\n")
    rep.artifacts.append(str(path))


_RUNNERS = {
    "relax": _run_relax,
    "oscillate": _run_oscillate,
    "diffuse": _run_diffuse,
    "wave": _run_wave,
    "verify": _run_verify,
}


def run(config: ScenarioConfig, out_dir=None) -> RunReport:
    """Run a validated scenario, write its artifacts and ``report.txt``."""
    out = Path(out_dir or config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(config.kind)
    try:
        _RUNNERS[config.kind](config, out, rep)
    except (FinstopError, ValueError, ArithmeticError) as exc:
        rep.add(f"error.{type(exc).__name__}: {exc}", math.nan, math.nan, False)
    path = out / "report.txt"
    rep.artifacts.append(str(path))
    path.write_text(rep.text())
    return rep


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="finstop", description="Finite stopping time scenarios.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="JSON scenario file")
    ap.add_argument("--out", default=None, help="output directory (default: config's output_dir or .)")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        raw = json.loads(text)
        if isinstance(raw, dict) and "kind" not in raw:
            raw["kind"] = args.kind
            text = json.dumps(raw)
        cfg = parse_config(text)
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return 2
    if cfg.kind != args.kind:
        print(f"error: kind: config says {cfg.kind!r} but the command asks for {args.kind!r}", file=sys.stderr)
        return 2
    rep = run(cfg, args.out)
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured={c.measured:.6g} threshold={c.threshold:.6g}")
    print(f"overall: {'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
