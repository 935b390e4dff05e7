"""
Linearised dynamics about the stationary state S_q+.

Z = (Psi, Pi, Q, P) obeys
    Psi' = Pi,  Pi' = Laplacian Psi + grad rho(x - q+) . Q,
    Q' = P,     P' = -(nu0^2 + nu1^2) Q + int Psi grad rho(x - q+) dx.
The field is kept implicit: its source is the fixed dipole density
grad rho(x - q+) with amplitude Q(tau), so the retarded part only needs the
recorded Q history. Because the source sits at a fixed point, the field has an
exact one-dimensional radial representation about q+.
"""
import time
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from config import ScenarioConfig, settings
from core_model import coulomb_gradient, coulomb_hessian, nu1_squared
from dynamics_engine import DynamicsEngine, build_scenario, rk4_delay_step
from field_data import stationary_deviation
from field_engine import FieldEngine, RetardedSource
from models import (ChargeDensity, DeviationState, DiagnosticSeries, FieldInitialData, FieldPart,
                    FieldSample, LinearDerivative, LinearRecord, LinearState, NonlinearRemainder,
                    Scenario)
from quadrature import ball_rule, composite_gauss, panel_ball_rule, panel_edges, split_gauss
from trajectory import TrajectoryHistory

FOUR_PI = 4.0 * np.pi


class DipoleSource(RetardedSource):
    """S(y, tau) = grad rho(y - c) . Q(tau)."""

    def __init__(self, density: ChargeDensity, center, history: TrajectoryHistory):
        self.density = density
        self.history = history
        self.center = np.asarray(center, dtype=float)
        self.radius = density.support_radius

    def terms(self, y, tau):
        Q, P, _ = self.history.interpolate(tau)
        rel = y - self.center
        grad = self.density.gradient(rel)
        value = np.einsum("...i,...i->...", grad, Q)
        gradient = np.einsum("...ij,...j->...i", self.density.hessian(rel), Q)
        return value, gradient, np.einsum("...i,...i->...", grad, P)

    def initial(self, y):
        Q0 = self.history.interpolate(0.0)[0]
        return self.density.gradient(y - self.center) @ Q0


def linear_initial_data(scenario: Scenario, mode: str) -> FieldInitialData:
    """Field data of the linear run: the deviation phi0 - s_q+ or the data as given."""
    if mode == "deviation":
        return stationary_deviation(scenario.field_data, scenario.density, scenario.q_plus)
    if mode == "free":
        return scenario.field_data
    raise ValueError(f"unknown linear field mode '{mode}'")


def _causal(history: TrajectoryHistory, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Q(tau) theta(tau) and P(tau) theta(tau)."""
    Q, P, _ = history.interpolate(np.clip(tau, 0.0, None))
    live = (tau > 0.0)[..., None]
    return np.where(live, Q, 0.0), np.where(live, P, 0.0)


class LinearEngine:
    """Fields, forces, energy and time stepping of the linearised system."""

    def __init__(self, field_engine: Optional[FieldEngine] = None,
                 dynamics: Optional[DynamicsEngine] = None,
                 panel_order: Optional[int] = None,
                 panel_width: Optional[float] = None,
                 u_order: Optional[int] = None):
        self.field_engine = field_engine or FieldEngine()
        self.dynamics = dynamics or DynamicsEngine(self.field_engine)
        self.panel_order = panel_order or settings.force_panel_order
        self.panel_width = panel_width or settings.force_panel_width
        self.u_order = u_order or settings.linear_u_order
        self.u_panels = settings.linear_u_panels
        self.chunk_size = 16 * settings.field_chunk_size

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "LinearEngine":
        dynamics = DynamicsEngine.from_config(cfg)
        return cls(dynamics.field_engine, dynamics, panel_order=cfg.quad.force_r)

    # -- field -------------------------------------------------------------------

    def _dipole_integrals(self, density: ChargeDensity, history: TrajectoryHistory, d: np.ndarray,
                          t: float, with_acceleration: bool):
        """
        With F(tau) = int_0^tau Q, h = u rho, g = (u rho)' and H the odd extension of h:
          J  = int h [F(t-|d-u|) - F(t-d-u)],  J' = int g [F(t-|d-u|) + F(t-d-u)],
          J'' = int g' [F(t-|d-u|) - F(t-d-u)],
        K, K' the same with Q theta in place of F, and L, L' with P theta plus
        the impulse Q(0) delta(tau) of the switched-on source.
        """
        R = density.support_radius
        kinks = np.clip(np.stack([d, t - d, d - t, d + t], axis=1), 0.0, R)
        edges = np.concatenate([np.zeros((len(d), 1)), np.sort(kinks, axis=1), np.full((len(d), 1), R)], axis=1)
        u, w = split_gauss(self.u_order, edges, self.u_panels)

        rho = density.profile(u)
        drho = density.gradient_profile(u)
        h = u * rho
        g = rho + u * drho
        g_slope = 2.0 * drho + u * density.curvature_profile(u)

        near = t - np.abs(d[:, None] - u)
        far = t - d[:, None] - u
        F1, F2 = history.integrate_position(near), history.integrate_position(far)
        (Q1, P1), (Q2, P2) = _causal(history, near), _causal(history, far)

        def moment(weight, values):
            return np.einsum("mk,mkj->mj", w * weight, values)

        out = {
            "J": moment(h, F1 - F2),
            "J1": moment(g, F1 + F2),
            "J2": moment(g_slope, F1 - F2),
            "K": moment(h, Q1 - Q2),
            "K1": moment(g, Q1 + Q2),
        }
        if with_acceleration:
            Q0 = history.interpolate(0.0)[0]
            lag, lead = d - t, d + t
            impulse = lag * density.profile(np.abs(lag)) + lead * density.profile(lead)
            impulse_slope = (density.profile(np.abs(lag)) + np.abs(lag) * density.gradient_profile(np.abs(lag))
                             + density.profile(lead) + lead * density.gradient_profile(lead))
            out["L"] = moment(h, P1 - P2) + impulse[:, None] * Q0
            out["L1"] = moment(g, P1 + P2) + impulse_slope[:, None] * Q0
        return out

    def linear_retarded_field(self, density: ChargeDensity, history: TrajectoryHistory, center, x,
                              t: float, with_acceleration: bool = False):
        """
        Retarded dipole field (Psi_r, Pi_r, grad Psi_r) and, optionally, d Pi_r / dt.

        Psi_r = x^ . u1 with u1 = J'/(2d) - J/(2d^2), the divergence of the
        retarded potential of rho(y) Q(tau).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(x)
        psi, pi, accel = np.zeros(n), np.zeros(n), np.zeros(n)
        grad = np.zeros((n, 3))
        if density.is_zero:
            return (psi, pi, grad, accel) if with_acceleration else (psi, pi, grad)
        if not density.smooth:
            raise ValueError(f"radial dipole field needs a smooth density, got '{density.name}'")

        rel = x - np.asarray(center, dtype=float)
        if t <= 0.0:
            if with_acceleration:
                accel = density.gradient(rel) @ history.interpolate(0.0)[0]
                return psi, pi, grad, accel
            return psi, pi, grad

        d = np.linalg.norm(rel, axis=1)
        floor = settings.linear_small_fraction * density.support_radius
        small = d < floor
        unit = np.where((d > 0.0)[:, None], rel / np.where(d > 0.0, d, 1.0)[:, None], np.array([1.0, 0.0, 0.0]))
        d_eval = np.where(small, floor, d)

        for start in range(0, n, self.chunk_size):
            sl = slice(start, start + self.chunk_size)
            dd = d_eval[sl][:, None]
            e = unit[sl]
            s = self._dipole_integrals(density, history, d_eval[sl], t, with_acceleration)
            u1 = s["J1"] / (2.0 * dd) - s["J"] / (2.0 * dd ** 2)
            u1_slope = s["J2"] / (2.0 * dd) - s["J1"] / dd ** 2 + s["J"] / dd ** 3
            radial = np.sum(e * u1, axis=1)
            psi[sl] = radial
            grad[sl] = e * np.sum(e * u1_slope, axis=1)[:, None] + (u1 - e * radial[:, None]) / dd
            pi[sl] = np.sum(e * (s["K1"] / (2.0 * dd) - s["K"] / (2.0 * dd ** 2)), axis=1)
            if with_acceleration:
                accel[sl] = np.sum(e * (s["L1"] / (2.0 * dd) - s["L"] / (2.0 * dd ** 2)), axis=1)

        # odd about the centre: linear extrapolation inside the floor radius
        scale = np.where(small, d / floor, 1.0)
        psi, pi, accel = psi * scale, pi * scale, accel * scale
        if with_acceleration:
            return psi, pi, grad, accel
        return psi, pi, grad

    def linear_field(self, scenario: Scenario, history: TrajectoryHistory, data: FieldInitialData, x,
                     t: float, with_acceleration: bool = False):
        """Linear field sample (retarded dipole part + free part); with_acceleration adds Psi_tt."""
        retarded = self.linear_retarded_field(scenario.density, history, scenario.q_plus, x, t, with_acceleration)
        free = self.field_engine.kirchhoff_field_radial(data, x, t, with_rate=with_acceleration)
        sample = FieldSample.from_parts(FieldPart(*retarded[:3]), FieldPart(*free[:3]))
        if with_acceleration:
            return sample, retarded[3] + free[3]
        return sample

    def linear_field_direct(self, scenario: Scenario, history: TrajectoryHistory, data: FieldInitialData,
                            x, t: float) -> FieldSample:
        """Same field through the generic retarded-integral quadrature (cross-check)."""
        source = DipoleSource(scenario.density, scenario.q_plus, history)
        retarded = self.field_engine.retarded_integral(source, x, t)
        free = FieldPart(*self.field_engine.kirchhoff_field_radial(data, x, t))
        return FieldSample.from_parts(retarded, free)

    # -- particle ------------------------------------------------------------------

    def linear_self_force(self, density: ChargeDensity, history: TrajectoryHistory, t: float) -> np.ndarray:
        """int Psi_r grad rho(x - q+) dx = -(1/3) int_0^min(t, 2R) (2C' + r C'') Q(t - r) dr."""
        if density.is_zero or t <= 0.0:
            return np.zeros(3)
        r_cap = min(t, 2.0 * density.support_radius)
        r, w = composite_gauss(panel_edges(0.0, r_cap, self.panel_width * density.support_radius), self.panel_order)
        tables = density.tables
        kernel = 2.0 * tables.autocorrelation_slope(r) + r * tables.autocorrelation_curvature(r)
        Q = history.interpolate(t - r)[0]
        return -(w * kernel) @ Q / 3.0

    def _stiffness(self, scenario: Scenario) -> float:
        return scenario.potential.nu0_squared + nu1_squared(scenario.density)

    def particle_rate(self, scenario: Scenario, history: TrajectoryHistory, data: FieldInitialData,
                      Q, t: float) -> np.ndarray:
        """P' = -(nu0^2 + nu1^2) Q + int Psi grad rho(x - q+) dx."""
        coupling = self.linear_self_force(scenario.density, history, t)
        coupling = coupling + self.dynamics.kirchhoff_force(scenario.density, data, scenario.q_plus, t)
        return -self._stiffness(scenario) * np.asarray(Q, dtype=float) + coupling

    def linear_apply_A(self, scenario: Scenario, state: LinearState) -> LinearDerivative:
        """
        A z = (Pi, Laplacian Psi + grad rho . Q, P, -(nu0^2 + nu1^2) Q + int Psi grad rho).

        Field components are returned as callables of x evaluated at state.t.
        """
        history, data, t = state.history, state.field_data, state.t
        dP = self.particle_rate(scenario, history, data, state.Q, t)

        def velocity(x):
            return self.linear_field(scenario, history, data, x, t).pi

        def acceleration(x):
            return self.linear_field(scenario, history, data, x, t, with_acceleration=True)[1]

        return LinearDerivative(velocity, acceleration, np.asarray(state.P, dtype=float).copy(), dP)

    def apply_A_particle(self, scenario: Scenario, q, psi=None) -> np.ndarray:
        """Particle component of A X for a deviation state with field psi, by ball quadrature."""
        q = np.asarray(q, dtype=float)
        out = -self._stiffness(scenario) * q
        if psi is not None and not scenario.density.is_zero:
            nodes, weights = ball_rule(scenario.density.support_radius, scenario.density.quadrature_order,
                                       scenario.q_plus)
            out = out + np.einsum("k,k,ki->i", weights, psi(nodes),
                                  scenario.density.gradient(nodes - scenario.q_plus))
        return out

    # -- nonlinear remainder --------------------------------------------------------------

    def _remainder_grid(self, scenario: Scenario, q: np.ndarray):
        R = scenario.density.support_radius
        shift = float(np.linalg.norm(q))
        n_r, n_mu, n_phi = scenario.density.quadrature_order
        return panel_ball_rule(R + shift, 0.25 * R, n_r, (n_mu, n_phi), scenario.q_plus, breaks=[R - shift, R])

    def nonlinear_remainder(self, scenario: Scenario, X: DeviationState) -> NonlinearRemainder:
        """
        B(X) for the deviation X = (psi, pi, q, p) from S_q+:
          field:    rho(x) - rho(x - q) - grad rho(x) . q
          particle: -grad V(q) + nu0^2 q + int psi [grad rho(x - q) - grad rho(x)]
                    + int grad s0(x) [rho(x) - rho(x - q) - grad rho(x) . q]
        with x measured from q+.
        """
        density, q_plus = scenario.density, scenario.q_plus
        q = np.asarray(X.q, dtype=float)

        def field_source(x):
            y = np.asarray(x, dtype=float) - q_plus
            return density.density(y) - density.density(y - q) - density.gradient(y) @ q

        particle = -np.asarray(scenario.potential.gradient(q_plus + q)) + scenario.potential.nu0_squared * q
        if density.is_zero:
            return NonlinearRemainder(field_source, particle, 0.0)

        nodes, weights = self._remainder_grid(scenario, q)
        y = nodes - q_plus
        source = field_source(nodes)
        particle = particle + np.einsum("k,k,ki->i", weights, source, coulomb_gradient(density, np.zeros(3), y))
        if X.psi is not None:
            shift = density.gradient(y - q) - density.gradient(y)
            particle = particle + np.einsum("k,k,ki->i", weights, X.psi(nodes), shift)
        field_norm = float(np.sqrt(np.sum(weights * source ** 2)))
        return NonlinearRemainder(field_source, particle, field_norm)

    def nonlinear_rhs_particle(self, scenario: Scenario, X: DeviationState) -> np.ndarray:
        """
        Particle component of the full deviation system:
        -grad V(q+ + q) + int psi grad rho(x - q) + int grad s0(x) [rho(x) - rho(x - q)].
        """
        density, q_plus = scenario.density, scenario.q_plus
        q = np.asarray(X.q, dtype=float)
        out = -np.asarray(scenario.potential.gradient(q_plus + q), dtype=float)
        if density.is_zero:
            return out
        nodes, weights = self._remainder_grid(scenario, q)
        y = nodes - q_plus
        moved = density.density(y) - density.density(y - q)
        out = out + np.einsum("k,k,ki->i", weights, moved, coulomb_gradient(density, np.zeros(3), y))
        if X.psi is not None:
            out = out + np.einsum("k,k,ki->i", weights, X.psi(nodes), density.gradient(y - q))
        return out

    # -- energy ------------------------------------------------------------------------

    def _energy_grid(self, scenario: Scenario, data: FieldInitialData, t: float):
        R = scenario.density.support_radius
        reach = t + R
        needs_tail = False
        for comp in data.components:
            if comp.weight == 0.0:
                continue
            offset = float(np.linalg.norm(comp.center - scenario.q_plus))
            if comp.label in ("coulomb", "power"):
                needs_tail = True
                reach = max(reach, offset + t + R)
            elif comp.huygens_radius is not None:
                reach = max(reach, offset + t + comp.huygens_radius)
        radius = reach + settings.energy_margin * R
        breaks = [R, abs(t - R), t, t + R]
        nodes, weights = panel_ball_rule(radius, settings.energy_panel_width * R, settings.energy_panel_order,
                                         settings.energy_sphere_order, scenario.q_plus, breaks)
        return nodes, weights, radius, needs_tail

    def _kirchhoff_tail(self, scenario: Scenario, data: FieldInitialData, t: float, radius: float) -> float:
        """Free-field energy in radius <= |x - q+| <= 4 radius (the retarded part vanishes there)."""
        width = max(settings.energy_panel_width * scenario.density.support_radius, 0.05 * radius)
        nodes, weights = panel_ball_rule(4.0 * radius, width, settings.energy_panel_order,
                                         settings.energy_sphere_order, scenario.q_plus, inner=radius)
        _, pi, grad = self.field_engine.kirchhoff_field_radial(data, nodes, t)
        return float(0.5 * np.sum(weights * (pi ** 2 + np.sum(grad ** 2, axis=1))))

    def linear_energy(self, scenario: Scenario, history: TrajectoryHistory, data: FieldInitialData,
                      t: float) -> Tuple[float, float, float]:
        """
        H0 = (1/2)[P^2 + (nu0^2 + nu1^2) Q^2 + int (Pi^2 + |grad Psi|^2) - 2 Q . int Psi grad rho]
        on a truncated ball around q+; returns (H0, tail estimate, truncation radius).
        """
        Q, P, _ = history.interpolate(t)
        nodes, weights, radius, needs_tail = self._energy_grid(scenario, data, t)
        sample = self.linear_field(scenario, history, data, nodes, t)
        field_energy = np.sum(weights * (sample.pi ** 2 + np.sum(sample.grad_phi ** 2, axis=1)))
        coupling = np.einsum("k,k,ki->i", weights, sample.phi, scenario.density.gradient(nodes - scenario.q_plus))
        value = 0.5 * (P @ P + self._stiffness(scenario) * (Q @ Q) + field_energy - 2.0 * Q @ coupling)
        tail = self._kirchhoff_tail(scenario, data, t, radius) if needs_tail else 0.0
        return float(value), tail, radius

    def positive_energy(self, scenario: Scenario, history: TrajectoryHistory, data: FieldInitialData,
                        t: float) -> float:
        """
        The same H0 written as a sum of squares,
        (1/2)[P^2 + nu0^2 Q^2 + int Pi^2 + |grad Psi + Hess s0 Q|^2],
        with the exterior dipole tail of |Hess s0 Q|^2 added analytically.
        """
        Q, P, _ = history.interpolate(t)
        nodes, weights, radius, _ = self._energy_grid(scenario, data, t)
        sample = self.linear_field(scenario, history, data, nodes, t)
        shifted = sample.grad_phi + coulomb_hessian(scenario.density, scenario.q_plus, nodes) @ Q
        field_energy = np.sum(weights * (sample.pi ** 2 + np.sum(shifted ** 2, axis=1)))
        charge = scenario.density.total_charge
        tail = charge ** 2 * (Q @ Q) / (6.0 * np.pi * radius ** 3)
        return float(0.5 * (P @ P + scenario.potential.nu0_squared * (Q @ Q) + field_energy + tail))

    # -- integration --------------------------------------------------------------------

    def integrate(self, scenario: Scenario, data: FieldInitialData, Q0, P0, h: float, T: float,
                  config: Optional[ScenarioConfig] = None, energy_samples: Optional[int] = None) -> LinearRecord:
        """Run the linearised system on [0, T] and evaluate H0 along the run."""
        Q0 = np.asarray(Q0, dtype=float)
        P0 = np.asarray(P0, dtype=float)
        steps = int(round(T / h))
        a0 = self.particle_rate(scenario, None, data, Q0, 0.0)
        history = TrajectoryHistory(h, Q0, P0, a0, capacity=steps + 1)

        logger.info(f"Linear run: {steps} steps of h={h} about q+={scenario.q_plus.tolist()}")
        started = time.perf_counter()
        report_every = max(1, int(steps * settings.progress_fraction))
        Q, P = Q0, P0
        for n in range(1, steps + 1):
            Q, P = rk4_delay_step(history, Q, P,
                                  lambda q, s: self.particle_rate(scenario, history, data, q, s))
            t = n * h
            history.append(Q, P, self.particle_rate(scenario, history, data, Q, t))
            if n % report_every == 0:
                logger.info(f"t={t:.4g} ({100 * n // steps}%): |Q|={np.linalg.norm(Q):.6g}")
        wall_time = time.perf_counter() - started
        snapshot = history.snapshot()

        samples = energy_samples or settings.linear_energy_samples
        indices = np.unique(np.round(np.linspace(0, steps, samples)).astype(int))
        times = indices * h
        values, tails, radii = [], [], []
        for s in times:
            value, tail, radius = self.linear_energy(scenario, snapshot, data, float(s))
            values.append(value)
            tails.append(tail)
            radii.append(radius)
        initial = values[0]
        drift = 0.0 if initial == 0.0 else float(np.max(np.abs(np.array(values) - initial)) / abs(initial))
        positive = self.positive_energy(scenario, snapshot, data, 0.0)
        energy = DiagnosticSeries("H0", times, values, {
            "truncation_radius": radii,
            "tail_bound": tails,
            "energy_panel_width": settings.energy_panel_width,
            "energy_panel_order": settings.energy_panel_order,
            "energy_sphere_order": list(settings.energy_sphere_order),
        })
        if drift > 1e-5:
            logger.warning(f"H0 relative drift {drift:.3e} over [0, {T}]")
        metadata = {"h": h, "T": T, "steps": steps, "H0_drift": drift, "H0_positive_form": positive,
                    "u_order": self.u_order, "u_panels": self.u_panels}
        logger.info(f"Linear run finished in {wall_time:.1f}s, H0 drift {drift:.3e}")
        return LinearRecord(config, snapshot, data, scenario, energy, wall_time, metadata)

    def linear_simulate(self, cfg: ScenarioConfig) -> LinearRecord:
        """Linear run of a config: Q0 = q0 - q+, P0 = p0, field per cfg.linear.field."""
        scenario = build_scenario(cfg)
        data = linear_initial_data(scenario, cfg.linear.field)
        Q0 = np.asarray(cfg.q0, dtype=float) - scenario.q_plus
        return self.integrate(scenario, data, Q0, cfg.p0, cfg.run.h, cfg.run.T, config=cfg)


# Global instance
linear_engine = LinearEngine()
