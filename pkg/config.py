"""
Configuration management for the wave-particle simulator.
Runtime defaults come from pydantic-settings (environment / .env); scenario
files are plain key=value text validated into a pydantic model.
"""
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from models import ConfigError


class Settings(BaseSettings):
    """Numerical defaults and runtime options."""

    # Logging / output
    log_level: str = Field(default="INFO", description="Log level")
    logs_dir: str = Field(default="logs", description="Directory for log files")
    output_dir: str = Field(default="runs", description="Default artifact directory")

    # Retarded-field quadrature
    ball_order: Tuple[int, int, int] = Field(default=(16, 16, 32), description="Ball rule (radial, polar, azimuthal)")
    sphere_order: Tuple[int, int] = Field(default=(24, 48), description="Sphere rule (polar, azimuthal)")
    axial_order: int = Field(default=128, description="Gauss nodes for the axial far-field reduction")
    slice_order: int = Field(default=8, description="Gauss nodes per slice panel of the far-field rule")
    slice_width: float = Field(default=0.25, description="Slice panel width in units of R_rho")
    disk_order: Tuple[int, int] = Field(default=(16, 8), description="Polar rule on each slice disk (radial, azimuthal)")
    radial_panels: int = Field(default=1, description="Gauss panels per radial segment of the retarded integral")
    field_chunk_size: int = Field(default=64, description="Evaluation points per vectorised quadrature chunk")

    # Self-force kernel
    force_panel_order: int = Field(default=8, description="Gauss nodes per radial panel of the force kernel")
    force_panel_width: float = Field(default=0.5, description="Radial panel width in units of R_rho")
    force_sphere_order: Tuple[int, int] = Field(default=(12, 24), description="Angular rule of the force kernel")
    kirchhoff_force_order: Tuple[int, int, int] = Field(default=(10, 10, 20), description="Ball rule for the Kirchhoff force")

    # Radial tables
    potential_table_nodes: int = Field(default=2048, description="Nodes of the s0 / enclosed-charge table")
    autocorrelation_nodes: int = Field(default=1024, description="Nodes of the density autocorrelation table")
    autocorrelation_panels: int = Field(default=4, description="Gauss panels per segment of the shell formula")
    shell_thickness_fraction: float = Field(default=0.01, description="Layer thickness of the shell density / R")

    # Integrator
    step_fraction: float = Field(default=0.02, description="Default time step in units of R_rho")
    progress_fraction: float = Field(default=0.1, description="Progress logging interval (fraction of the run)")

    # Tolerances
    plane_tolerance: float = Field(default=1e-9, description="Bound on |q3| + |p3| in plane mode")
    wiener_cross_check_tol: float = Field(default=1e-6, description="Tolerance of the marginal transform identity")
    wiener_threshold_fraction: float = Field(default=1e-4, description="Wiener threshold as a fraction of Q")
    wiener_samples: int = Field(default=2000, description="Grid points of the Wiener scan")
    wiener_kmax_factor: float = Field(default=20.0, description="k_max in units of 2*pi/R_rho")
    decay_eps: float = Field(default=0.25, description="Tolerance on fitted decay exponents")
    decay_floor: float = Field(default=1e-12, description="Values below are excluded from decay fits")
    decay_min_points: int = Field(default=8, description="Minimum usable points of a decay fit")
    relaxation_floor: float = Field(default=1e-10, description="Envelope below which a run counts as at rest")
    cone_eps: float = Field(default=0.01, description="Margin epsilon of the Theta cone")
    relaxation_window: float = Field(default=0.25, description="Early/late envelope windows (fraction of the run)")
    scatter_ratio: float = Field(default=0.2, description="Envelope ratio below which a run counts as converged")
    scatter_samples: int = Field(default=2000, description="Max knots sampled for the scattering remainder")

    # Radiation
    radiation_sphere_order: Tuple[int, int] = Field(default=(12, 24), description="Direction rule of the radiation functional")
    radiation_time_width: float = Field(default=0.5, description="Time panel width (units of R_rho) of the radiation integral")
    radiation_time_order: int = Field(default=4, description="Gauss nodes per radiation time panel")

    # Energies
    energy_panel_width: float = Field(default=0.25, description="Radial panel width (units of R_rho) of energy balls")
    energy_panel_order: int = Field(default=6, description="Gauss nodes per radial energy panel")
    energy_sphere_order: Tuple[int, int] = Field(default=(8, 16), description="Angular rule of energy balls")
    energy_margin: float = Field(default=1.0, description="Extra truncation radius beyond the light cone")
    audit_sphere_order: Tuple[int, int] = Field(default=(16, 32), description="Angular rule of local energies and fluxes")
    flux_panel_width: float = Field(default=1.0, description="Time panel width (units of R_rho) of flux integrals")
    flux_panel_order: int = Field(default=6, description="Gauss nodes per flux time panel")
    linear_energy_samples: int = Field(default=6, description="H0 evaluations along a linear run")
    linear_u_order: int = Field(default=16, description="Gauss nodes per segment of the radial dipole integrals")
    linear_u_panels: int = Field(default=4, description="Gauss panels per segment of the radial dipole integrals")
    linear_small_fraction: float = Field(default=1e-3, description="Radius (units of R_rho) below which the dipole field is extrapolated")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="WAVECHARGE_",
        case_sensitive=False,
    )


# Global settings instance
settings = Settings()


def validate_settings() -> None:
    """Validate configuration settings."""
    if settings.log_level.upper() not in ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]:
        raise ValueError(f"Unknown log level '{settings.log_level}'")

    orders = list(settings.ball_order) + list(settings.sphere_order) + list(settings.force_sphere_order)
    orders += list(settings.kirchhoff_force_order) + list(settings.energy_sphere_order)
    orders += [settings.axial_order, settings.force_panel_order, settings.energy_panel_order, settings.slice_order]
    orders += list(settings.disk_order)
    if min(orders) < 2:
        raise ValueError("Quadrature orders must be at least 2")

    if settings.potential_table_nodes < 16 or settings.autocorrelation_nodes < 16:
        raise ValueError("Radial tables need at least 16 nodes")

    if min(settings.radial_panels, settings.autocorrelation_panels, settings.linear_u_panels) < 1:
        raise ValueError("Panel counts must be at least 1")

    if not 0.0 < settings.step_fraction <= 1.0:
        raise ValueError("step_fraction must lie in (0, 1]")

    if not 0.0 < settings.shell_thickness_fraction < 1.0:
        raise ValueError("shell_thickness_fraction must lie in (0, 1)")


# Validate on import
validate_settings()


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class RhoSpec(_Section):
    kind: Literal["bump", "uniform_ball", "shell", "zero"] = "bump"
    radius: float = Field(default=1.0, gt=0.0)
    charge: float = 1.0
    thickness: Optional[float] = Field(default=None, gt=0.0)


class PotentialSpec(_Section):
    kind: Literal["harmonic", "quartic"] = "harmonic"
    nu0: float = Field(default=1.0, gt=0.0)
    lam: float = Field(default=0.1, ge=0.0, alias="lambda")
    center1: float = 0.0
    center2: float = 0.0
    center3: float = 0.0


class InitSpec(_Section):
    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0


class FieldSpec(_Section):
    kind: Literal["zero", "matched", "bump", "plateau", "power"] = "zero"
    phi_amplitude: float = 0.0
    pi_amplitude: float = 0.0
    radius: float = Field(default=1.0, gt=0.0)
    width: float = Field(default=0.5, gt=0.0)
    sigma: float = Field(default=2.5, gt=1.5)
    center1: float = 0.0
    center2: float = 0.0
    center3: float = 0.0


class RunSpec(_Section):
    h: Optional[float] = Field(default=None, gt=0.0)
    T: float = Field(default=10.0, gt=0.0)
    plane: bool = False
    escape_radius: Optional[float] = Field(default=None, gt=0.0)
    quiescent_past: bool = False


class QuadSpec(_Section):
    ball_r: int = Field(default_factory=lambda: settings.ball_order[0], ge=2)
    ball_mu: int = Field(default_factory=lambda: settings.ball_order[1], ge=2)
    ball_phi: int = Field(default_factory=lambda: settings.ball_order[2], ge=2)
    sphere_mu: int = Field(default_factory=lambda: settings.sphere_order[0], ge=2)
    sphere_phi: int = Field(default_factory=lambda: settings.sphere_order[1], ge=2)
    force_r: int = Field(default_factory=lambda: settings.force_panel_order, ge=2)
    force_mu: int = Field(default_factory=lambda: settings.force_sphere_order[0], ge=2)
    force_phi: int = Field(default_factory=lambda: settings.force_sphere_order[1], ge=2)


class TolSpec(_Section):
    plane: float = Field(default_factory=lambda: settings.plane_tolerance, gt=0.0)
    wiener_threshold: Optional[float] = Field(default=None, ge=0.0)
    decay_eps: float = Field(default_factory=lambda: settings.decay_eps, gt=0.0)


class LinearSpec(_Section):
    field: Literal["deviation", "free"] = "deviation"


class ScenarioConfig(BaseModel):
    """Validated scenario: density, potential, initial state, field data, run control."""

    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    rho: RhoSpec = Field(default_factory=RhoSpec)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    init: InitSpec = Field(default_factory=InitSpec)
    field: FieldSpec = Field(default_factory=FieldSpec)
    run: RunSpec = Field(default_factory=RunSpec)
    quad: QuadSpec = Field(default_factory=QuadSpec)
    tol: TolSpec = Field(default_factory=TolSpec)
    linear: LinearSpec = Field(default_factory=LinearSpec)

    @model_validator(mode="after")
    def _check_constraints(self) -> "ScenarioConfig":
        if self.run.h is None:
            # largest step not above step_fraction * R that divides T
            target = settings.step_fraction * self.rho.radius
            self.run.h = self.run.T / math.ceil(self.run.T / target - 1e-9)

        steps = round(self.run.T / self.run.h)
        if steps < 1 or abs(steps * self.run.h - self.run.T) > 1e-9 * max(1.0, self.run.T):
            raise ValueError(f"run.T={self.run.T} must be a positive multiple of run.h={self.run.h}")

        if self.run.plane:
            if self.init.q3 != 0.0:
                raise ValueError("init.q3: plane mode condition (Q) requires q³(0)=0")
            if self.init.p3 != 0.0:
                raise ValueError("init.p3: plane mode condition (Q) requires p³(0)=0")
            if self.potential.center3 != 0.0:
                raise ValueError("potential.center3: plane mode condition (qVc) requires the minimum in the plane x³=0")
            if self.field.center3 != 0.0:
                raise ValueError("field.center3: plane mode requires initial fields even in x³")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.run.T / self.run.h))

    @property
    def q0(self) -> Tuple[float, float, float]:
        return (self.init.q1, self.init.q2, self.init.q3)

    @property
    def p0(self) -> Tuple[float, float, float]:
        return (self.init.p1, self.init.p2, self.init.p3)


_SECTIONS = ("rho", "potential", "init", "field", "run", "quad", "tol", "linear")


def _section_keys(section: str) -> Dict[str, str]:
    """Map accepted file keys (aliases included) to model field names."""
    model = ScenarioConfig.model_fields[section].annotation
    keys = {}
    for name, info in model.model_fields.items():
        keys[info.alias or name] = name
        keys[name] = name
    return keys


def parse_config(text: str, strict: bool = True) -> ScenarioConfig:
    """
    Parse key=value scenario text.

    `rho=bump` selects a catalog entry, `rho.radius=1.5` sets one of its
    parameters. Blank lines and `#` comments are ignored.
    """
    raw: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"line {lineno}: expected key=value, got '{content}'")
        key, value = (part.strip() for part in content.split("=", 1))

        if key == "name":
            raw["name"] = value
            continue

        section, _, attr = key.partition(".")
        if section not in _SECTIONS or (attr and attr not in _section_keys(section)) or (not attr and section in ("init", "run", "quad", "tol")):
            if strict:
                raise ConfigError(f"unknown key '{key}'")
            logger.warning(f"Ignoring unknown config key '{key}'")
            continue

        field_name = _section_keys(section)[attr] if attr else "kind"
        if section == "linear" and not attr:
            field_name = "field"
        raw.setdefault(section, {})[field_name] = value

    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        messages = []
        for err in e.errors():
            loc = ".".join(str(part) for part in err["loc"] if part != "kind")
            msg = err["msg"].removeprefix("Value error, ")
            messages.append(f"{loc}: {msg}" if loc else msg)
        raise ConfigError("; ".join(messages)) from e


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical key=value text; parse_config(serialize_config(c)) == c."""
    lines: List[str] = [f"name={cfg.name}"]
    for section in _SECTIONS:
        block = getattr(cfg, section)
        for name, info in sorted(type(block).model_fields.items()):
            value = getattr(block, name)
            if value is None:
                continue
            if name == "kind" or (section == "linear" and name == "field"):
                key = section
            else:
                key = f"{section}.{info.alias or name}"
            lines.append(f"{key}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def load_config(path: str, strict: bool = True) -> ScenarioConfig:
    """Read and parse a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        logger.error(f"Cannot read config {path}: {e}")
        raise ConfigError(f"cannot read config '{path}': {e}") from e
    return parse_config(text, strict=strict)
