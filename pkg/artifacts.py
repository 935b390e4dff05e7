"""
Run artifacts on disk.

A run directory holds knots.csv, forces.csv, config.json and summary.json;
every CSV starts with a `# {json}` metadata line. Readers raise ArtifactError
on anything missing or inconsistent.
"""
import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from config import load_config, parse_config, serialize_config, settings
from dynamics_engine import build_scenario
from models import (ArtifactError, ConfigError, DiagnosticSeries, ForceRecord, LinearRecord, RunManifest,
                    SimulationRecord)
from trajectory import KNOT_COLUMNS, TrajectoryHistory
from utils import (read_csv_with_metadata, safe_json_load, safe_json_save, validate_dataframe,
                   write_csv_with_metadata)

FORCE_COLUMNS = ["t"] + [f"{part}{i}" for part in ("ext", "ret", "kir") for i in (1, 2, 3)]


def _save_json(data: Any, path: Path) -> None:
    if not safe_json_save(data, str(path)):
        raise ArtifactError(f"cannot write '{path}'")


def _config_payload(cfg) -> Dict[str, Any]:
    return {"config": serialize_config(cfg), "settings": settings.model_dump(mode="json")}


def save_run(record: SimulationRecord, out_dir: str) -> Path:
    """Write knots, forces, config and summary of a nonlinear run."""
    out = Path(out_dir)
    # wall time stays out of the CSVs so repeated runs write identical tables
    write_csv_with_metadata(record.history.to_frame(), str(out / "knots.csv"), record.metadata)

    forces = record.forces
    table = np.hstack([record.history.times[:, None], forces.external, forces.retarded, forces.kirchhoff])
    write_csv_with_metadata(pd.DataFrame(table, columns=FORCE_COLUMNS), str(out / "forces.csv"),
                            {"h": record.history.step})

    if record.config is not None:
        _save_json(_config_payload(record.config), out / "config.json")

    q_plus = record.scenario.q_plus
    history = record.history
    summary = {
        "knots": len(history),
        "final_q": history.positions[-1],
        "final_p": history.velocities[-1],
        "final_distance": float(np.linalg.norm(history.positions[-1] - q_plus)),
        "speed_bound": history.speed_bound,
        "max_radius": history.max_radius(),
        "wall_time": record.wall_time,
    }
    _save_json(summary, out / "summary.json")
    logger.info(f"Saved run ({len(history)} knots) to {out}")
    return out


def load_run(run_dir: str) -> SimulationRecord:
    """Rebuild a SimulationRecord; the scenario is rebuilt from the stored config."""
    path = Path(run_dir)
    payload = safe_json_load(str(path / "config.json"))
    if not isinstance(payload, dict) or "config" not in payload:
        raise ArtifactError(f"'{path / 'config.json'}' is missing or unreadable")
    try:
        cfg = parse_config(payload["config"])
    except ConfigError as e:
        raise ArtifactError(f"stored config of '{path}' is invalid: {e}") from e

    knots, meta = read_csv_with_metadata(str(path / "knots.csv"))
    if not validate_dataframe(knots, KNOT_COLUMNS):
        raise ArtifactError(f"'{path / 'knots.csv'}' is corrupted")
    forces_df, _ = read_csv_with_metadata(str(path / "forces.csv"))
    if not validate_dataframe(forces_df, FORCE_COLUMNS) or len(forces_df) != len(knots):
        raise ArtifactError(f"'{path / 'forces.csv'}' is corrupted or does not match the knots")

    try:
        history = TrajectoryHistory.from_frame(knots, quiescent_past=cfg.run.quiescent_past)
    except ValueError as e:
        raise ArtifactError(f"knot table of '{path}': {e}") from e
    data = forces_df[FORCE_COLUMNS].to_numpy(dtype=float)
    forces = ForceRecord(data[:, 1:4], data[:, 4:7], data[:, 7:10])
    summary = safe_json_load(str(path / "summary.json"), {})
    wall_time = float(summary.get("wall_time", 0.0)) if isinstance(summary, dict) else 0.0
    logger.debug(f"Loaded run from {path}: {len(history)} knots")
    return SimulationRecord(cfg, history, forces, build_scenario(cfg), wall_time, meta)


def save_linear_run(record: LinearRecord, out_dir: str) -> Path:
    """Knots of (Q, P, P') plus the H0 samples of a linear run."""
    out = Path(out_dir)
    meta = {**record.metadata, "field": record.field_data.name}
    write_csv_with_metadata(record.history.to_frame(), str(out / "knots.csv"), meta)
    if record.energy is not None:
        save_series(record.energy, str(out / "energy.csv"))
    if record.config is not None:
        _save_json(_config_payload(record.config), out / "config.json")
    return out


def save_series(series: DiagnosticSeries, file_path: str) -> None:
    """Series as a CSV with columns t and the series name (name_1.. for vectors)."""
    values = series.values.reshape(len(series.times), -1)
    if values.shape[1] == 1:
        columns = {series.name: values[:, 0]}
    else:
        columns = {f"{series.name}_{i + 1}": values[:, i] for i in range(values.shape[1])}
    df = pd.DataFrame({"t": series.times, **columns})
    write_csv_with_metadata(df, file_path, {"name": series.name, **series.metadata})


def load_manifest(path: str) -> RunManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return RunManifest.model_validate(json.load(f))
    except OSError as e:
        raise ConfigError(f"cannot read manifest '{path}': {e}") from e
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"invalid manifest '{path}': {e}") from e


def save_manifest(manifest: RunManifest, path: str) -> None:
    _save_json(manifest.model_dump(mode="json"), Path(path))


def manifest_config(manifest: RunManifest, strict: bool = True):
    """Scenario config referenced by a manifest (relative paths resolve against the cwd)."""
    return load_config(manifest.config_path, strict=strict)
