"""
Dynamics engine: the coupled particle-field system as a delay equation.

The field is eliminated through phi = phi_r + phi_K, so the particle obeys
q' = p, p' = -grad V(q) + int phi(x, t) grad rho(x - q) dx, where the
retarded part depends on the whole past trajectory. The integrator is a
fixed-step RK4 whose stages extend the history provisionally.
"""
import time
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger

from config import ScenarioConfig, settings
from core_model import make_density, make_potential
from field_data import make_field_data
from field_engine import FieldEngine, theta_threshold
from models import (ChargeDensity, FieldInitialData, ForceRecord, Scenario, SimulationError,
                    SimulationRecord, SystemState)
from quadrature import ball_rule, cap_rule, composite_gauss, panel_edges
from trajectory import TrajectoryHistory

FOUR_PI = 4.0 * np.pi
Breakdown = Tuple[np.ndarray, np.ndarray, np.ndarray]


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Resolve the catalog keys of a config into density, potential and field data."""
    orders = (cfg.quad.ball_r, cfg.quad.ball_mu, cfg.quad.ball_phi)
    density = make_density(cfg.rho.kind, radius=cfg.rho.radius, charge=cfg.rho.charge,
                           thickness=cfg.rho.thickness, orders=orders)
    potential = make_potential(cfg.potential.kind, nu0=cfg.potential.nu0, lam=cfg.potential.lam,
                               center=(cfg.potential.center1, cfg.potential.center2, cfg.potential.center3))
    field_data = make_field_data(
        cfg.field.kind, density, cfg.q0,
        phi_amplitude=cfg.field.phi_amplitude,
        pi_amplitude=cfg.field.pi_amplitude,
        radius=cfg.field.radius,
        width=cfg.field.width,
        sigma=cfg.field.sigma,
        center=(cfg.field.center1, cfg.field.center2, cfg.field.center3),
    )
    if cfg.run.plane and not field_data.is_plane_symmetric:
        raise ValueError("plane mode requires initial fields even in x3")
    return Scenario(density, potential, field_data)


def rk4_delay_step(history: TrajectoryHistory, q: np.ndarray, p: np.ndarray,
                   acceleration: Callable[[np.ndarray, float], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    RK4 stages of q' = p, p' = acceleration(q, t) from the last knot of the history.

    Stage times are taken from the knot index (t_n = n h), never accumulated.

    The stored acceleration of that knot is the first stage; later stages see
    the history extended by a provisional knot carrying the stage values.
    On return the provisional knot holds the new state at t + dt.
    """
    dt = history.step
    t = (len(history) - 1) * dt
    end = len(history) * dt
    k1q, k1p = p, history.last_knot[2]

    half = t + 0.5 * dt
    q2, p2 = q + 0.5 * dt * k1q, p + 0.5 * dt * k1p
    history.set_provisional(half, q2, p2)
    k2q, k2p = p2, acceleration(q2, half)

    q3, p3 = q + 0.5 * dt * k2q, p + 0.5 * dt * k2p
    history.set_provisional(half, q3, p3)
    k3q, k3p = p3, acceleration(q3, half)

    q4, p4 = q + dt * k3q, p + dt * k3p
    history.set_provisional(end, q4, p4)
    k4q, k4p = p4, acceleration(q4, end)

    q_new = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    p_new = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
        history.clear_provisional()
        raise SimulationError(f"nonfinite state at t={end:.6g}: q={q_new}, p={p_new}")
    history.set_provisional(end, q_new, p_new)
    return q_new, p_new


def default_escape_radius(q0) -> float:
    """Confinement sanity bound: 10 |q0| + 10."""
    return 10.0 * float(np.linalg.norm(q0)) + 10.0


class DynamicsEngine:
    """Self-force evaluation and time stepping of the nonlinear system."""

    def __init__(self, field_engine: Optional[FieldEngine] = None,
                 panel_order: Optional[int] = None,
                 panel_width: Optional[float] = None,
                 sphere_order: Optional[Tuple[int, int]] = None,
                 kirchhoff_order: Optional[Tuple[int, int, int]] = None):
        self.field_engine = field_engine or FieldEngine()
        self.panel_order = panel_order or settings.force_panel_order
        self.panel_width = panel_width or settings.force_panel_width
        self.sphere_order = tuple(sphere_order or settings.force_sphere_order)
        self.kirchhoff_order = tuple(kirchhoff_order or settings.kirchhoff_force_order)

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "DynamicsEngine":
        fields = FieldEngine(ball_order=(cfg.quad.ball_r, cfg.quad.ball_mu, cfg.quad.ball_phi),
                             sphere_order=(cfg.quad.sphere_mu, cfg.quad.sphere_phi))
        return cls(fields, panel_order=cfg.quad.force_r,
                   sphere_order=(cfg.quad.force_mu, cfg.quad.force_phi))

    # -- forces -------------------------------------------------------------------

    def retarded_self_force(self, density: ChargeDensity, history: TrajectoryHistory, q, t: float) -> np.ndarray:
        """
        int phi_r(x, t) grad rho(x - q) dx in kernel form:
        (1/4 pi) int_0^t r dr int C'(|d|) d/|d| dn with d = q - q(t - r) + r n.
        """
        q = np.asarray(q, dtype=float)
        if density.is_zero or t <= 0.0:
            return np.zeros(3)
        R = density.support_radius
        center, spread = history.bounding_ball()
        reach = 2.0 * R + float(np.linalg.norm(q - center)) + spread
        r_cap = min(t, reach)

        r, w_r = composite_gauss(panel_edges(0.0, r_cap, self.panel_width * R), self.panel_order)
        q_past = history.interpolate(t - r)[0]
        offset = q - q_past
        gap = np.linalg.norm(offset, axis=1)
        centred = gap < 1e-12
        axis = np.where(centred[:, None], np.array([0.0, 0.0, 1.0]),
                        -offset / np.where(centred, 1.0, gap)[:, None])
        # only directions with |d| < 2R reach the autocorrelation support
        with np.errstate(divide="ignore", invalid="ignore"):
            mu_min = (gap ** 2 + r ** 2 - 4.0 * R ** 2) / (2.0 * r * np.where(centred, 1.0, gap))
        mu_min = np.clip(np.where(centred | (r <= 0.0), -1.0, mu_min), -1.0, 1.0)

        dirs, w_dir = cap_rule(axis, mu_min[:, None], *self.sphere_order)
        d = offset[:, None, None, :] + r[:, None, None, None] * dirs
        dist = np.linalg.norm(d, axis=-1)
        slope = density.tables.autocorrelation_slope(dist)
        unit = d / np.where(dist > 0.0, dist, 1.0)[..., None]
        weight = (w_r * r)[:, None, None] * w_dir
        return np.einsum("rkm,rkmi->i", weight * slope, unit) / FOUR_PI

    def kirchhoff_force(self, density: ChargeDensity, data: FieldInitialData, q, t: float) -> np.ndarray:
        """int phi_K(x, t) grad rho(x - q) dx by ball quadrature around q."""
        q = np.asarray(q, dtype=float)
        if density.is_zero or data.is_zero or self._kirchhoff_quiet(density, data, q, t):
            return np.zeros(3)
        nodes, weights = ball_rule(density.support_radius, self.kirchhoff_order, q)
        phi = self.field_engine.kirchhoff_field_radial(data, nodes, t)[0]
        return np.einsum("k,k,ki->i", weights, phi, density.gradient(nodes - q))

    @staticmethod
    def _kirchhoff_quiet(density: ChargeDensity, data: FieldInitialData, q: np.ndarray, t: float) -> bool:
        """True once every component has passed the ball around q (strong Huygens)."""
        for comp in data.components:
            if comp.weight == 0.0:
                continue
            if comp.huygens_radius is None:
                return False
            if t <= np.linalg.norm(q - comp.center) + density.support_radius + comp.huygens_radius:
                return False
        return True

    def self_force(self, density: ChargeDensity, history: TrajectoryHistory, data: FieldInitialData,
                   q, t: float, method: str = "kernel") -> np.ndarray:
        """
        int phi(x, t) grad rho(x - q) dx over |x - q| <= R_rho.

        "kernel" uses the autocorrelation form of the retarded part, "direct"
        integrates field_eval over a ball grid (slow, kept as a cross-check).
        """
        q = np.asarray(q, dtype=float)
        if method == "kernel":
            return self.retarded_self_force(density, history, q, t) + self.kirchhoff_force(density, data, q, t)
        if method != "direct":
            raise ValueError(f"unknown self-force method '{method}'")
        if density.is_zero:
            return np.zeros(3)
        nodes, weights = ball_rule(density.support_radius, self.kirchhoff_order, q)
        sample = self.field_engine.field_eval(density, history, data, nodes, t)
        return np.einsum("k,k,ki->i", weights, sample.phi, density.gradient(nodes - q))

    def force_breakdown(self, scenario: Scenario, history: TrajectoryHistory, q, t: float) -> Breakdown:
        """(-grad V(q), retarded self-force, Kirchhoff force)."""
        q = np.asarray(q, dtype=float)
        external = -np.asarray(scenario.potential.gradient(q), dtype=float)
        retarded = self.retarded_self_force(scenario.density, history, q, t)
        kirchhoff = self.kirchhoff_force(scenario.density, scenario.field_data, q, t)
        return external, retarded, kirchhoff

    def _acceleration(self, scenario: Scenario, history: TrajectoryHistory, q, t: float) -> np.ndarray:
        return sum(self.force_breakdown(scenario, history, q, t))

    # -- integration ----------------------------------------------------------------

    def step(self, state: SystemState, scenario: Scenario, dt: float) -> Tuple[SystemState, Breakdown]:
        """One RK4 step from a knot; the new knot is appended with its own force breakdown."""
        history = state.history
        if dt != history.step:
            raise ValueError(f"step {dt} differs from the history spacing {history.step}")
        q_new, p_new = rk4_delay_step(
            history, state.q, state.p,
            lambda q, t: self._acceleration(scenario, history, q, t),
        )
        t_new = len(history) * history.step
        breakdown = self.force_breakdown(scenario, history, q_new, t_new)
        history.append(q_new, p_new, sum(breakdown))
        return SystemState(t_new, q_new, p_new, state.field_data, history), breakdown

    def integrate(self, scenario: Scenario, q0, p0, h: float, T: float, plane: bool = False,
                  plane_tolerance: Optional[float] = None, escape_radius: Optional[float] = None,
                  quiescent_past: bool = False, config: Optional[ScenarioConfig] = None) -> SimulationRecord:
        """Run the delay system on [0, T] with step h."""
        q0 = np.asarray(q0, dtype=float)
        p0 = np.asarray(p0, dtype=float)
        steps = int(round(T / h))
        escape = escape_radius or default_escape_radius(q0)
        plane_tolerance = settings.plane_tolerance if plane_tolerance is None else plane_tolerance

        # retarded part vanishes at t = 0
        external = -np.asarray(scenario.potential.gradient(q0), dtype=float)
        kirchhoff = self.kirchhoff_force(scenario.density, scenario.field_data, q0, 0.0)
        retarded = np.zeros(3)
        history = TrajectoryHistory(h, q0, p0, external + retarded + kirchhoff,
                                    quiescent_past=quiescent_past, capacity=steps + 1)
        forces = [(external, retarded, kirchhoff)]

        logger.info(f"Simulating {steps} steps of h={h} (rho={scenario.density.name}, "
                    f"V={scenario.potential.name}, field={scenario.field_data.name})")
        started = time.perf_counter()
        report_every = max(1, int(steps * settings.progress_fraction))
        state = SystemState(0.0, q0, p0, scenario.field_data, history)
        for n in range(1, steps + 1):
            state, breakdown = self.step(state, scenario, h)
            forces.append(breakdown)
            radius = float(np.linalg.norm(state.q))
            if radius > escape:
                raise SimulationError(f"step {n}: |q|={radius:.6g} exceeds escape radius {escape:.6g}")
            if plane and abs(state.q[2]) + abs(state.p[2]) >= plane_tolerance:
                raise SimulationError(f"step {n}: plane invariance lost, |q3|+|p3|="
                                      f"{abs(state.q[2]) + abs(state.p[2]):.3e}")
            if n % report_every == 0:
                logger.info(f"t={state.t:.4g} ({100 * n // steps}%): |q|={radius:.6g}, |p|={np.linalg.norm(state.p):.6g}")

        wall_time = time.perf_counter() - started
        snapshot = history.snapshot()
        record = ForceRecord(*(np.array([f[i] for f in forces]) for i in range(3)))
        try:
            theta = theta_threshold(snapshot.speed_bound, settings.cone_eps)
        except ValueError:
            theta = None
        metadata = {
            "h": h,
            "T": T,
            "steps": steps,
            "escape_radius": escape,
            "speed_bound": snapshot.speed_bound,
            "max_radius": snapshot.max_radius(),
            "theta": theta,
            "force_panel_order": self.panel_order,
            "force_sphere_order": list(self.sphere_order),
            "kirchhoff_force_order": list(self.kirchhoff_order),
        }
        logger.info(f"Simulation finished in {wall_time:.1f}s, speed bound {snapshot.speed_bound:.4g}")
        return SimulationRecord(config, snapshot, record, scenario, wall_time, metadata)

    def simulate(self, cfg: ScenarioConfig) -> SimulationRecord:
        """Full run of a validated scenario config."""
        scenario = build_scenario(cfg)
        return self.integrate(
            scenario, cfg.q0, cfg.p0, cfg.run.h, cfg.run.T,
            plane=cfg.run.plane,
            plane_tolerance=cfg.tol.plane,
            escape_radius=cfg.run.escape_radius,
            quiescent_past=cfg.run.quiescent_past,
            config=cfg,
        )


# Global instance
dynamics_engine = DynamicsEngine()
