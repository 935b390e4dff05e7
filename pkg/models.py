"""
Data models and type definitions for the wave-particle system.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

ArrayFn = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class WaveChargeError(Exception):
    """Base class of all errors raised by this package."""


class ConfigError(WaveChargeError, ValueError):
    """Invalid scenario text or manifest."""


class HistoryCoverageError(WaveChargeError, ValueError):
    """A trajectory value was requested outside the recorded history."""


class ConeViolationError(WaveChargeError, ValueError):
    """Direction outside the cone |omega^3| >= Theta."""


class SimulationError(WaveChargeError, RuntimeError):
    """Integrator abort (non-finite state, escape, plane drift)."""


class DiagnosticError(WaveChargeError, RuntimeError):
    """A diagnostic cannot be computed for the given run."""


class ArtifactError(WaveChargeError, OSError):
    """Missing or corrupted run artifact."""


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class Verdict(Enum):
    """Outcome of a pass/fail gate."""
    PASS = "pass"
    FAIL = "fail"


class DecayFlag(Enum):
    """Interpretation of a fitted decay exponent against a one-sided bound."""
    UPPER_BOUND_CONSISTENT = "upper-bound-consistent"
    INCONCLUSIVE = "inconclusive"


class FarfieldFormula(Enum):
    GENERAL = "general"
    CONE = "cone"
    AXIAL = "axial"


# ---------------------------------------------------------------------------
# Core model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialTables:
    """Dense radial tables of a density, built once at construction."""
    enclosed: Callable  # M(r) = int_0^r s^2 rho(s) ds
    moment: Callable  # P(r) = int_0^r s rho(s) ds
    potential: Callable  # interior s0(r)
    autocorrelation: Callable  # C(s) = int rho(u) rho(u + s e) du
    autocorrelation_slope: Callable  # C'(s)
    autocorrelation_curvature: Callable  # C''(s)


@dataclass(frozen=True)
class ChargeDensity:
    """Radial, compactly supported coupling density rho(x) = profile(|x|)."""
    name: str
    profile: ArrayFn
    gradient_profile: ArrayFn
    support_radius: float
    quadrature_order: Tuple[int, int, int]
    total_charge: float
    l2_norm_sq: float
    curvature_profile: Optional[ArrayFn] = None
    smooth: bool = True
    breakpoints: Tuple[float, ...] = ()
    tables: Optional[RadialTables] = field(default=None, repr=False)

    @property
    def is_zero(self) -> bool:
        return self.l2_norm_sq == 0.0

    @property
    def moment_total(self) -> float:
        """int_0^R r rho(r) dr."""
        return float(self.tables.moment(self.support_radius))

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.profile(np.linalg.norm(x, axis=-1))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x, axis=-1)
        slope = self.gradient_profile(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0.0, slope / np.where(r > 0.0, r, 1.0), 0.0)
        return scale[..., None] * x

    def hessian(self, x: np.ndarray) -> np.ndarray:
        """rho'' x^ x^T + (rho'/r)(I - x^ x^T); needs curvature_profile."""
        if self.curvature_profile is None:
            raise ValueError(f"density '{self.name}' has no curvature profile")
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0.0, r, 1.0)
        unit = x / safe[..., None]
        second = self.curvature_profile(r)
        ratio = np.where(r > 0.0, self.gradient_profile(r) / safe, second)
        outer = unit[..., :, None] * unit[..., None, :]
        return second[..., None, None] * outer + ratio[..., None, None] * (np.eye(3) - outer)


@dataclass(frozen=True)
class ConfiningPotential:
    """External potential V with an isotropic minimum."""
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    minimum: np.ndarray
    nu0_squared: float
    params: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class StationaryState:
    """Particle at rest at a critical point of V with its Coulomb field."""
    center: np.ndarray
    coulomb_field: Callable[[np.ndarray], np.ndarray]
    energy: float


@dataclass
class SystemState:
    """Particle coordinates at a knot; the field is implicit in the history."""
    t: float
    q: np.ndarray
    p: np.ndarray
    field_data: Optional["FieldInitialData"] = None
    history: Optional[Any] = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p)))


# ---------------------------------------------------------------------------
# Field data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayClass:
    """Spatial decay of initial fields: compact support, power law or Coulomb tail."""
    kind: str  # "zero", "compact", "power", "coulomb"
    radius: Optional[float] = None
    sigma: Optional[float] = None

    @property
    def alpha_sup(self) -> float:
        """Supremum of weights alpha with the data in E_alpha."""
        if self.kind in ("zero", "compact"):
            return float("inf")
        return float(self.sigma) - 1.5

    def admits(self, alpha: float) -> bool:
        return alpha < self.alpha_sup


@dataclass(frozen=True)
class RadialComponent:
    """
    weight * (f(|x-c|), g(|x-c|)) with analytic radial derivatives.

    pi_moment(w) = int_0^w u g(u) du. For t > |x-c| + huygens_radius the free
    evolution of the component vanishes identically (None: never).
    """
    label: str
    center: np.ndarray
    weight: float
    phi: ArrayFn
    dphi: ArrayFn
    d2phi: ArrayFn
    pi: ArrayFn
    dpi: ArrayFn
    pi_moment: ArrayFn
    huygens_radius: Optional[float] = None

    def scaled(self, factor: float) -> "RadialComponent":
        return RadialComponent(
            self.label, self.center, self.weight * factor, self.phi, self.dphi, self.d2phi,
            self.pi, self.dpi, self.pi_moment, self.huygens_radius,
        )

    def _radial(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rel = np.asarray(x, dtype=float) - self.center
        d = np.linalg.norm(rel, axis=-1)
        safe = np.where(d > 0.0, d, 1.0)
        return d, rel / safe[..., None]


@dataclass(frozen=True)
class FieldInitialData:
    """Initial field (phi0, pi0) as a sum of weighted radial components."""
    name: str
    components: Tuple[RadialComponent, ...] = ()
    decay_class: DecayClass = field(default_factory=lambda: DecayClass("zero"))

    @property
    def is_zero(self) -> bool:
        return all(c.weight == 0.0 for c in self.components)

    @property
    def is_plane_symmetric(self) -> bool:
        return all(abs(c.center[2]) == 0.0 for c in self.components)

    def scaled(self, factor: float) -> "FieldInitialData":
        return FieldInitialData(self.name, tuple(c.scaled(factor) for c in self.components), self.decay_class)

    def combined(self, other: "FieldInitialData", name: Optional[str] = None) -> "FieldInitialData":
        kinds = ["zero", "compact", "power", "coulomb"]
        if self.is_zero:
            decay = other.decay_class
        elif other.is_zero:
            decay = self.decay_class
        else:
            decay = max(self.decay_class, other.decay_class, key=lambda d: kinds.index(d.kind))
        return FieldInitialData(name or f"{self.name}+{other.name}", self.components + other.components, decay)

    def _sum(self, x: np.ndarray, term: Callable, shape: Tuple[int, ...]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + shape)
        for c in self.components:
            if c.weight != 0.0:
                out += c.weight * term(c, x)
        return out

    def phi0(self, x: np.ndarray) -> np.ndarray:
        return self._sum(x, lambda c, y: c.phi(c._radial(y)[0]), ())

    def pi0(self, x: np.ndarray) -> np.ndarray:
        return self._sum(x, lambda c, y: c.pi(c._radial(y)[0]), ())

    def grad_phi0(self, x: np.ndarray) -> np.ndarray:
        def term(c, y):
            d, unit = c._radial(y)
            return c.dphi(d)[..., None] * unit
        return self._sum(x, term, (3,))

    def grad_pi0(self, x: np.ndarray) -> np.ndarray:
        def term(c, y):
            d, unit = c._radial(y)
            return c.dpi(d)[..., None] * unit
        return self._sum(x, term, (3,))

    def hess_phi0(self, x: np.ndarray) -> np.ndarray:
        def term(c, y):
            d, unit = c._radial(y)
            second = c.d2phi(d)
            ratio = np.where(d > 1e-12, c.dphi(d) / np.where(d > 1e-12, d, 1.0), second)
            outer = unit[..., :, None] * unit[..., None, :]
            return second[..., None, None] * outer + ratio[..., None, None] * (np.eye(3) - outer)
        return self._sum(x, term, (3, 3))


@dataclass
class FieldPart:
    phi: np.ndarray
    pi: np.ndarray
    grad_phi: np.ndarray


@dataclass
class FieldSample:
    """Total field with its retarded and Kirchhoff parts."""
    phi: np.ndarray
    pi: np.ndarray
    grad_phi: np.ndarray
    retarded: FieldPart
    kirchhoff: FieldPart

    @classmethod
    def from_parts(cls, retarded: FieldPart, kirchhoff: FieldPart) -> "FieldSample":
        return cls(
            phi=retarded.phi + kirchhoff.phi,
            pi=retarded.pi + kirchhoff.pi,
            grad_phi=retarded.grad_phi + kirchhoff.grad_phi,
            retarded=retarded,
            kirchhoff=kirchhoff,
        )


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Objects built from a ScenarioConfig."""
    density: ChargeDensity
    potential: ConfiningPotential
    field_data: FieldInitialData

    @property
    def q_plus(self) -> np.ndarray:
        return self.potential.minimum


@dataclass
class ForceRecord:
    """Per-knot force decomposition; the three parts sum to the stored acceleration."""
    external: np.ndarray
    retarded: np.ndarray
    kirchhoff: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.external + self.retarded + self.kirchhoff


@dataclass
class SimulationRecord:
    """Completed nonlinear run."""
    config: Any
    history: Any
    forces: ForceRecord
    scenario: Scenario
    wall_time: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class LinearState:
    """Snapshot of the linearised system: (Q, P) now plus the source record Q(tau)."""
    t: float
    Q: np.ndarray
    P: np.ndarray
    history: Any
    field_data: FieldInitialData


@dataclass
class LinearDerivative:
    """Components of A z: field ones as callables of x."""
    field_velocity: Callable[[np.ndarray], np.ndarray]
    field_acceleration: Callable[[np.ndarray], np.ndarray]
    dQ: np.ndarray
    dP: np.ndarray


@dataclass
class DeviationState:
    """X = (psi, pi, q, p) relative to the stationary state at q_plus."""
    q: np.ndarray
    p: np.ndarray
    psi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pi: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class NonlinearRemainder:
    field_source: Callable[[np.ndarray], np.ndarray]
    particle: np.ndarray
    field_norm: float = 0.0

    @property
    def norm(self) -> float:
        return float(self.field_norm + np.linalg.norm(self.particle))


@dataclass
class LinearRecord:
    """Completed linearised run."""
    config: Any
    history: Any
    field_data: FieldInitialData
    scenario: Scenario
    energy: Optional["DiagnosticSeries"] = None
    wall_time: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

@dataclass
class WienerReport:
    k_max: float
    samples: int
    min_abs: float
    argmin: float
    threshold: float
    tail_envelope: float = 0.0
    cross_check_error: float = 0.0

    @property
    def verdict(self) -> Verdict:
        return Verdict.PASS if self.min_abs > self.threshold else Verdict.FAIL


@dataclass
class DiagnosticSeries:
    """Tagged time series with provenance metadata."""
    name: str
    times: np.ndarray
    values: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or len(self.values) != len(self.times):
            raise ValueError(f"series '{self.name}': times and values must align")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError(f"series '{self.name}': time grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"series '{self.name}': values must be finite")


@dataclass
class DecayFit:
    t_min: float
    t_max: float
    beta: float
    residual: float
    flag: DecayFlag
    alpha_target: float
    eps_tol: float
    points: int
    excluded: int = 0
    amplitude: float = 0.0


@dataclass
class FluxBalance:
    radius: float
    t_start: float
    t_end: float
    delta_energy: float
    flux_integral: float
    parts: Dict[str, float] = field(default_factory=dict)

    @property
    def mismatch(self) -> float:
        return abs(self.delta_energy - self.flux_integral)


@dataclass
class ConvolutionCheck:
    t: float
    lhs: float
    rhs: float

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class RelaxationSummary:
    peak_speed: float
    early_envelope: float
    late_envelope: float
    peak_acceleration: float
    late_acceleration: float
    theta: float

    @property
    def envelope_ratio(self) -> float:
        if self.early_envelope <= 0.0:
            return 0.0
        return self.late_envelope / self.early_envelope


@dataclass
class WeightedNorm:
    value: float
    field_part: float
    momentum_part: float
    particle_part: float
    tail_bound: float
    truncation_radius: float


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

class SubcommandSpec(BaseModel):
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Batch job: one scenario plus the diagnostics to run on it."""
    scenario_id: str
    config_path: str
    output_dir: str
    subcommands: List[SubcommandSpec] = Field(default_factory=list)
    seed: int = 0
    tool_version: str = "1.0.0"


# ---------------------------------------------------------------------------
# Serializers
# ---------------------------------------------------------------------------

def wiener_report_to_dict(report: WienerReport) -> Dict[str, Any]:
    """Convert WienerReport to dictionary."""
    return {
        "k_max": report.k_max,
        "samples": report.samples,
        "min_abs": report.min_abs,
        "argmin": report.argmin,
        "threshold": report.threshold,
        "verdict": report.verdict.value,
        "tail_envelope": report.tail_envelope,
        "cross_check_error": report.cross_check_error,
    }


def decay_fit_to_dict(fit: DecayFit) -> Dict[str, Any]:
    """Convert DecayFit to dictionary."""
    return {
        "t_min": fit.t_min,
        "t_max": fit.t_max,
        "beta": fit.beta,
        "residual": fit.residual,
        "flag": fit.flag.value,
        "alpha_target": fit.alpha_target,
        "eps_tol": fit.eps_tol,
        "points": fit.points,
        "excluded": fit.excluded,
    }


def flux_balance_to_dict(balance: FluxBalance) -> Dict[str, Any]:
    """Convert FluxBalance to dictionary."""
    return {
        "radius": balance.radius,
        "t_start": balance.t_start,
        "t_end": balance.t_end,
        "delta_energy": balance.delta_energy,
        "flux_integral": balance.flux_integral,
        "mismatch": balance.mismatch,
        **{f"flux_{k}": v for k, v in balance.parts.items()},
    }


def relaxation_to_dict(summary: RelaxationSummary) -> Dict[str, Any]:
    """Convert RelaxationSummary to dictionary."""
    return {
        "peak_speed": summary.peak_speed,
        "early_envelope": summary.early_envelope,
        "late_envelope": summary.late_envelope,
        "envelope_ratio": summary.envelope_ratio,
        "peak_acceleration": summary.peak_acceleration,
        "late_acceleration": summary.late_acceleration,
        "theta": summary.theta,
    }


def check_to_dict(check: CheckResult) -> Dict[str, Any]:
    return {
        "name": check.name,
        "passed": check.passed,
        "value": check.value,
        "threshold": check.threshold,
        "detail": check.detail,
    }
