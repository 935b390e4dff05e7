#!/usr/bin/env python3
"""
Batch front end.

    python cli.py simulate --config scenario.txt --out runs/demo
    python cli.py audit --run runs/demo/run --param radius=6 --param t1=20
    python cli.py execute --manifest manifest.json

Exit codes: 0 when every requested check passes, 1 when a check fails,
2 on configuration, artifact or numerical errors.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from artifacts import load_manifest, load_run, manifest_config, save_linear_run, save_run, save_series
from charge_analysis import charge_analysis_engine
from config import ScenarioConfig, load_config, settings
from core_model import check_plane_symmetry
from diagnostics_engine import diagnostics_engine
from dynamics_engine import DynamicsEngine, build_scenario
from field_engine import theta_threshold
from linear_engine import LinearEngine
from models import (CheckResult, ConfigError, DecayFlag, DiagnosticError, RunManifest, SimulationRecord,
                    Verdict, WaveChargeError, check_to_dict, decay_fit_to_dict, flux_balance_to_dict,
                    relaxation_to_dict, wiener_report_to_dict)
from quadrature import sphere_rule
from utils import (ensure_directory, fibonacci_directions, normalize_directions, safe_json_save, setup_logging, to_json,
                   write_csv_with_metadata)

StageResult = Tuple[Dict[str, Any], List[CheckResult]]


class Pipeline:
    """One scenario shared by the stages of a manifest; the run is simulated on first use."""

    def __init__(self, out_dir: str, cfg: Optional[ScenarioConfig] = None, run_dir: Optional[str] = None,
                 seed: int = 0):
        self.out = Path(out_dir)
        self.seed = seed
        self._record: Optional[SimulationRecord] = None
        if run_dir is not None:
            self._record = load_run(run_dir)
            cfg = self._record.config
        if cfg is None:
            raise ConfigError("a scenario config or a run directory is required")
        self.cfg = cfg
        self.scenario = self._record.scenario if self._record else build_scenario(cfg)

    @property
    def record(self) -> SimulationRecord:
        if self._record is None:
            self._record = DynamicsEngine.from_config(self.cfg).simulate(self.cfg)
            save_run(self._record, str(self.out / "run"))
        return self._record


def _direction_gap(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest |a - b| relative to the peak amplitude of its direction (rows)."""
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)).max(axis=1, keepdims=True), floor)
    return float(np.max(np.abs(a - b) / scale))


def _long_rows(dirs: np.ndarray, times: np.ndarray, values: np.ndarray, formula: str) -> pd.DataFrame:
    grid = np.repeat(dirs, len(times), axis=0)
    return pd.DataFrame({"t": np.tile(times, len(dirs)), "omega1": grid[:, 0], "omega2": grid[:, 1],
                         "omega3": grid[:, 2], "pibar": values.ravel(), "formula": formula})


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_simulate(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    record = pipe.record
    history = record.history
    distance = float(np.linalg.norm(history.positions[-1] - record.scenario.q_plus))
    checks = []
    if "max_distance" in params:
        drift = float(np.max(np.linalg.norm(history.positions - record.scenario.q_plus, axis=1)))
        checks.append(CheckResult("stationary", drift < params["max_distance"], drift, params["max_distance"]))
    return {"final_distance": distance, "speed_bound": history.speed_bound}, checks


def stage_wiener(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    threshold = params.get("threshold", pipe.cfg.tol.wiener_threshold)
    report = charge_analysis_engine.wiener_scan(pipe.scenario.density, k_max=params.get("k_max"),
                                                samples=params.get("samples"), threshold=threshold)
    result = wiener_report_to_dict(report)
    safe_json_save(result, str(pipe.out / "wiener.json"))
    check = CheckResult("wiener", report.verdict == Verdict.PASS, report.min_abs, report.threshold,
                        f"argmin k = {report.argmin:.6g}")
    return {"wiener": result}, [check]


def stage_farfield(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    """
    Far-field amplitudes in long format, one row per (t, omega, formula).

    params: omega (list of unit 3-vectors) or directions (Fibonacci count),
    times (list of t or a count spread over the amplitude window), min_cos, tol.
    The cone formula is added for planar runs on the directions inside the cone.
    """
    if "omega" in params:
        try:
            dirs = normalize_directions(np.asarray(params["omega"], dtype=float).reshape(-1, 3))
        except ValueError as exc:
            raise ConfigError(f"farfield omega must be a list of unit 3-vectors: {exc}") from exc
    else:
        dirs = fibonacci_directions(int(params.get("directions", 20)))
    record = pipe.record
    density, history = record.scenario.density, record.history
    engine = diagnostics_engine.field_engine
    lo, hi = engine.amplitude_window(density, history, dirs)
    times = params.get("times", 20)
    if isinstance(times, (list, tuple)):
        times = np.asarray(times, dtype=float)
        if times.size == 0 or times.min() < lo or times.max() > hi:
            raise DiagnosticError(f"farfield times must lie in the amplitude window [{lo:.4g}, {hi:.4g}]")
    else:
        if hi <= lo:
            raise DiagnosticError(f"run too short for far-field sampling: window [{lo:.4g}, {hi:.4g}]")
        times = np.linspace(lo, hi, int(times))

    general = np.stack([engine.farfield_amplitude(density, history, dirs, t) for t in times], axis=1)
    axial = engine.farfield_amplitude_axial(density, history, dirs, times)
    frames = [_long_rows(dirs, times, general, "general"), _long_rows(dirs, times, axial, "axial")]
    gap = _direction_gap(general, axial)
    denominator = None
    if pipe.cfg.run.plane:
        theta = theta_threshold(history.speed_bound, settings.cone_eps)
        inside = np.abs(dirs[:, 2]) >= max(theta, params.get("min_cos", 0.0))
        if np.any(inside):
            cone, denominators = [], []
            for t in times:
                value, low = engine.farfield_amplitude_cone(density, history, dirs[inside], t, return_denominator=True)
                cone.append(value)
                denominators.append(low)
            cone = np.stack(cone, axis=1)
            frames.append(_long_rows(dirs[inside], times, cone, "cone"))
            gap = max(gap, _direction_gap(general[inside], cone))
            denominator = float(min(denominators))
        else:
            logger.warning(f"No direction with |omega3| >= {theta:.4g}; cone formula skipped")

    write_csv_with_metadata(pd.concat(frames, ignore_index=True), str(pipe.out / "farfield.csv"), {
        "ball_order": list(engine.ball_order), "axial_order": engine.axial_order,
        "slice_order": engine.slice_order, "disk_order": list(engine.disk_order), "h": history.step,
    })
    tol = params.get("tol", 1e-3)
    info = {"farfield_gap": gap, "cone_denominator": denominator}
    return info, [CheckResult("farfield", gap <= tol, gap, tol)]


def stage_audit(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    balance = diagnostics_engine.flux_balance(pipe.record, params.get("radius", 6.0),
                                              params.get("t0", 0.0), params.get("t1", 20.0))
    row = flux_balance_to_dict(balance)
    write_csv_with_metadata(pd.DataFrame([row]), str(pipe.out / "audit.csv"), {
        "sphere_order": list(diagnostics_engine.sphere_order),
        "flux_panel_width": settings.flux_panel_width,
        "flux_panel_order": settings.flux_panel_order,
        "h": pipe.record.history.step,
    })
    tol = 1e-3 * (abs(balance.delta_energy) + abs(balance.flux_integral)) + 1e-6
    return {"audit_mismatch": balance.mismatch}, [CheckResult("audit", balance.mismatch <= tol, balance.mismatch, tol)]


def stage_radiation(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    record = pipe.record
    T = params.get("T")
    if T is None:
        dirs, _ = sphere_rule(*settings.radiation_sphere_order)
        T = diagnostics_engine.field_engine.amplitude_window(record.scenario.density, record.history, dirs)[1]
    series = diagnostics_engine.radiation_functional(record, T)
    save_series(series, str(pipe.out / "radiation.csv"))
    checks = []
    info = {"radiated": float(series.values[-1])}
    if "max_increment_ratio" in params:
        middle = 0.5 * (series.times[0] + series.times[-1])
        first = float(np.interp(middle, series.times, series.values))
        second = float(series.values[-1]) - first
        ratio = second / first if first > 0.0 else 0.0
        info["radiation_increment_ratio"] = ratio
        checks.append(CheckResult("radiation", ratio < params["max_increment_ratio"], ratio,
                                  params["max_increment_ratio"]))
    return info, checks


def stage_relaxation(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    speed, accel, summary = diagnostics_engine.relaxation_series(pipe.record, params.get("window"))
    save_series(speed, str(pipe.out / "speed.csv"))
    save_series(accel, str(pipe.out / "acceleration.csv"))
    checks = []
    if "max_ratio" in params:
        checks.append(CheckResult("relaxation", summary.envelope_ratio < params["max_ratio"],
                                  summary.envelope_ratio, params["max_ratio"]))
    if "min_ratio" in params:
        checks.append(CheckResult("no_damping", summary.envelope_ratio >= params["min_ratio"],
                                  summary.envelope_ratio, params["min_ratio"]))
    return {"relaxation": relaxation_to_dict(summary)}, checks


def stage_ratefit(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    record = pipe.record
    T = record.history.last_time
    alpha = params.get("alpha", 1.5)
    t_min, t_max = params.get("t_min", 0.5 * T), params.get("t_max", T)
    kind = params.get("series", "speed")
    if kind == "speed":
        series = diagnostics_engine.relaxation_series(record)[0]
    elif kind == "weighted":
        reach = record.history.max_radius() + record.scenario.density.support_radius
        times = np.linspace(t_min, t_max, int(params.get("samples", 12)))
        series = diagnostics_engine.weighted_norm_series(record, alpha, times, params.get("R_trunc", 2.0 * reach))
    else:
        raise ConfigError(f"ratefit: unknown series '{kind}'")

    fit = diagnostics_engine.decay_fit(series, t_min, t_max, alpha_target=alpha, eps_tol=pipe.cfg.tol.decay_eps)
    result = decay_fit_to_dict(fit)
    save_series(series, str(pipe.out / f"{series.name}.csv"))
    save_series(diagnostics_engine.majorant(series, alpha, fit.eps_tol), str(pipe.out / f"majorant_{series.name}.csv"))
    safe_json_save(result, str(pipe.out / f"ratefit_{series.name}.json"))
    passed = fit.flag == DecayFlag.UPPER_BOUND_CONSISTENT
    return {f"ratefit_{series.name}": result}, [CheckResult(f"ratefit_{series.name}", passed, fit.beta,
                                                            alpha - fit.eps_tol, fit.flag.value)]


def stage_scatter(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    record = pipe.record
    alpha = params.get("alpha", 1.5)
    norms, bound = diagnostics_engine.scattering_remainder(record, alpha, params.get("t", 0.0))
    save_series(norms, str(pipe.out / "source_remainder.csv"))
    save_series(bound, str(pipe.out / "r1_bound.csv"))
    target = alpha - 1.0 - pipe.cfg.tol.decay_eps
    if float(np.max(bound.values)) <= settings.decay_floor:
        return {"scatter_bound": 0.0}, [CheckResult("scatter", True, 0.0, settings.decay_floor, "remainder vanishes")]
    T = float(bound.times[-1])
    fit = diagnostics_engine.decay_fit(bound, params.get("t_min", 0.25 * T), params.get("t_max", 0.75 * T),
                                       alpha_target=alpha - 1.0, eps_tol=pipe.cfg.tol.decay_eps)
    return ({"scatter": decay_fit_to_dict(fit)},
            [CheckResult("scatter", fit.beta >= target, fit.beta, target, fit.flag.value)])


def stage_plane(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    """Planar invariance of the run and of V (random planar samples drawn from the manifest seed)."""
    tol = pipe.cfg.tol.plane
    potential_drift = check_plane_symmetry(pipe.scenario.potential, int(params.get("samples", 100)), seed=pipe.seed)
    history = pipe.record.history
    drift = float(np.max(np.abs(history.positions[:, 2]) + np.abs(history.velocities[:, 2])))
    return {"plane_drift": drift}, [CheckResult("plane_potential", potential_drift < tol, potential_drift, tol),
                                    CheckResult("plane", drift < tol, drift, tol)]


def stage_linear(pipe: Pipeline, params: Dict[str, Any]) -> StageResult:
    record = LinearEngine.from_config(pipe.cfg).linear_simulate(pipe.cfg)
    save_linear_run(record, str(pipe.out / "linear"))
    drift = record.metadata["H0_drift"]
    tol = params.get("max_drift", 1e-5)
    return ({"H0_drift": drift, "H0_positive_form": record.metadata["H0_positive_form"]},
            [CheckResult("linear_energy", drift < tol, drift, tol)])


STAGES: Dict[str, Callable[[Pipeline, Dict[str, Any]], StageResult]] = {
    "simulate": stage_simulate,
    "wiener": stage_wiener,
    "farfield": stage_farfield,
    "audit": stage_audit,
    "radiation": stage_radiation,
    "relaxation": stage_relaxation,
    "ratefit": stage_ratefit,
    "scatter": stage_scatter,
    "plane": stage_plane,
    "linear": stage_linear,
}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def _finish(out: Path, summary: Dict[str, Any], checks: List[CheckResult]) -> int:
    failed = [c for c in checks if not c.passed]
    summary["checks"] = [check_to_dict(c) for c in checks]
    summary["failures"] = [c.name for c in failed]
    safe_json_save(summary, str(out / "summary.json"))
    if failed:
        print(to_json({"failures": [check_to_dict(c) for c in failed]}))
        logger.warning(f"{len(failed)} check(s) failed: {', '.join(c.name for c in failed)}")
        return 1
    logger.success(f"All {len(checks)} check(s) passed")
    return 0


def _fail(error: Exception) -> int:
    logger.error(f"{type(error).__name__}: {error}")
    print(to_json({"failures": [{"name": "error", "type": type(error).__name__, "detail": str(error)}]}))
    return 2


def run_stages(pipe: Pipeline, stages: List[Tuple[str, Dict[str, Any]]], summary: Dict[str, Any]) -> int:
    unknown = [name for name, _ in stages if name not in STAGES]
    if unknown:
        raise ConfigError(f"unknown subcommand(s) {unknown}, expected one of {sorted(STAGES)}")
    checks: List[CheckResult] = []
    for name, params in stages:
        logger.info(f"Stage '{name}' {params or ''}")
        info, stage_checks = STAGES[name](pipe, params)
        summary.update(info)
        checks.extend(stage_checks)
    return _finish(pipe.out, summary, checks)


def execute(manifest: RunManifest, strict: bool = True) -> int:
    """Simulate the manifest's scenario, run its diagnostics and write the artifact set."""
    out = Path(manifest.output_dir)
    summary: Dict[str, Any] = {"scenario_id": manifest.scenario_id, "seed": manifest.seed,
                               "tool_version": manifest.tool_version}
    try:
        ensure_directory(str(out))
        cfg = manifest_config(manifest, strict=strict)
        pipe = Pipeline(str(out), cfg=cfg, seed=manifest.seed)
        stages = [(entry.name, dict(entry.params)) for entry in manifest.subcommands]
        if not any(name == "simulate" for name, _ in stages):
            stages.insert(0, ("simulate", {}))
        return run_stages(pipe, stages, summary)
    except (WaveChargeError, ValueError) as e:
        summary["error"] = {"type": type(e).__name__, "detail": str(e)}
        safe_json_save(summary, str(out / "summary.json"))
        return _fail(e)


def _parse_params(pairs: List[str]) -> Dict[str, Any]:
    params: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got '{pair}'")
        try:
            params[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            params[key.strip()] = value.strip()
    return params


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key=value)")
    common.add_argument("--run", help="existing run directory instead of simulating")
    common.add_argument("--out", default=settings.output_dir, help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed of Monte-Carlo checks")
    common.add_argument("--strict", dest="strict", action="store_true", default=True,
                        help="unknown config keys are errors (default)")
    common.add_argument("--no-strict", dest="strict", action="store_false",
                        help="unknown config keys are logged and ignored")
    common.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="stage parameter (JSON value), repeatable")
    common.add_argument("--log-level", default=settings.log_level)

    parser = argparse.ArgumentParser(description="Wave field coupled to an extended charge: runs and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=(STAGES[name].__doc__ or f"{name} stage").strip().splitlines()[0])
    run_manifest = sub.add_parser("execute", parents=[common], help="run a JSON manifest")
    run_manifest.add_argument("--manifest", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, settings.logs_dir)

    if args.command == "execute":
        try:
            manifest = load_manifest(args.manifest)
        except WaveChargeError as e:
            return _fail(e)
        return execute(manifest, strict=args.strict)

    summary: Dict[str, Any] = {"command": args.command, "seed": args.seed}
    try:
        params = _parse_params(args.param)
        cfg = load_config(args.config, strict=args.strict) if args.config and not args.run else None
        pipe = Pipeline(args.out, cfg=cfg, run_dir=args.run, seed=args.seed)
        ensure_directory(args.out)
        return run_stages(pipe, [(args.command, params)], summary)
    except (WaveChargeError, ValueError) as e:
        return _fail(e)


if __name__ == "__main__":
    sys.exit(main())
