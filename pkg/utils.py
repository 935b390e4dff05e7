"""
Utility functions for the wave-particle simulator.
"""
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from models import ArtifactError


def setup_logging(log_level: str = "INFO", log_dir: str = "logs") -> None:
    """Setup logging configuration with file rotation."""
    Path(log_dir).mkdir(parents=True, exist_ok=True)

    logger.remove()

    logger.add(
        f"{log_dir}/wavecharge.log",
        rotation="10 MB",
        retention="30 days",
        level=log_level,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"
    )

    logger.add(
        lambda msg: print(msg, end=""),
        level=log_level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level}</level> | {message}"
    )


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    return str(value)


def to_json(data: Any) -> str:
    """Deterministic JSON text (sorted keys, numpy aware)."""
    return json.dumps(data, sort_keys=True, default=_json_default)


def safe_json_load(file_path: str, default: Any = None) -> Any:
    """Safely load JSON file with default fallback."""
    try:
        with open(file_path, 'r') as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError):
        return default


def safe_json_save(data: Any, file_path: str) -> bool:
    """Safely save data to JSON file."""
    try:
        Path(file_path).parent.mkdir(parents=True, exist_ok=True)

        with open(file_path, 'w') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        return True
    except Exception as e:
        logger.error(f"Failed to save JSON to {file_path}: {e}")
        return False


def ensure_directory(path: str) -> None:
    """Ensure directory exists, create if it doesn't."""
    Path(path).mkdir(parents=True, exist_ok=True)


def validate_dataframe(df: pd.DataFrame, required_columns: List[str]) -> bool:
    """Validate DataFrame has required columns, is not empty and holds finite numbers."""
    if df.empty:
        return False

    missing_columns = set(required_columns) - set(df.columns)
    if missing_columns:
        logger.warning(f"Missing columns: {sorted(missing_columns)}")
        return False

    values = df[required_columns].apply(pd.to_numeric, errors="coerce").to_numpy()
    if not np.all(np.isfinite(values)):
        logger.warning("Non-finite or non-numeric entries in table")
        return False

    return True


def write_csv_with_metadata(df: pd.DataFrame, file_path: str, metadata: Dict[str, Any]) -> None:
    """
    Write `# {json}` followed by the table.

    The file appears atomically: a reader never sees a partial CSV.
    """
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write("# " + to_json(metadata) + "\n")
            df.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
        os.replace(tmp_name, path)
    except Exception as e:
        logger.error(f"Failed to write {file_path}: {e}")
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise ArtifactError(f"cannot write '{file_path}': {e}") from e
    logger.debug(f"Wrote {len(df)} rows to {file_path}")


def read_csv_with_metadata(file_path: str) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """Inverse of write_csv_with_metadata; floats are parsed back bit for bit."""
    try:
        with open(file_path, "r") as f:
            header = f.readline()
            if not header.startswith("# "):
                raise ArtifactError(f"'{file_path}' lacks the metadata line")
            metadata = json.loads(header[2:])
            df = pd.read_csv(f, float_precision="round_trip")
    except ArtifactError:
        raise
    except (OSError, ValueError, pd.errors.ParserError) as e:
        logger.error(f"Failed to read {file_path}: {e}")
        raise ArtifactError(f"cannot read '{file_path}': {e}") from e
    return df, metadata


def normalize_directions(omega: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Check that directions are unit vectors and return them as float arrays."""
    omega = np.asarray(omega, dtype=float)
    norms = np.linalg.norm(omega, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("direction vectors must have unit length")
    return omega


def fibonacci_directions(n: int) -> np.ndarray:
    """Quasi-uniform unit vectors on the sphere (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    mu = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5.0 ** 0.5) * k
    s = np.sqrt(1.0 - mu ** 2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), mu], axis=-1)
