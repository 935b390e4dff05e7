"""
Unit tests for the run diagnostics.
"""
from functools import lru_cache

import numpy as np
import pytest

from config import settings
from core_model import make_density, make_potential, stationary_energy
from diagnostics_engine import DiagnosticsEngine, remainder_norm
from dynamics_engine import DynamicsEngine
from field_data import make_field_data, matched_field, zero_field
from field_engine import FieldEngine
from models import (DecayFlag, DiagnosticError, DiagnosticSeries, ForceRecord, Scenario,
                    SimulationRecord)
from quadrature import ball_rule, sphere_rule
from trajectory import TrajectoryHistory


def make_run(history, density=None, data=None, potential=None):
    density = density or make_density("zero")
    potential = potential or make_potential("harmonic", nu0=1.0)
    zeros = np.zeros((len(history), 3))
    return SimulationRecord(config=None, history=history, forces=ForceRecord(zeros, zeros, zeros),
                            scenario=Scenario(density, potential, data or zero_field()))


def at_rest(horizon=6.0, step=0.1):
    zero = lambda t: np.zeros(3)
    return TrajectoryHistory.from_function(step, horizon, zero, zero, zero)


def circling(horizon=12.0, step=0.05, radius=0.3):
    return TrajectoryHistory.from_function(
        step, horizon,
        lambda t: radius * np.array([np.cos(t), np.sin(t), 0.0]),
        lambda t: radius * np.array([-np.sin(t), np.cos(t), 0.0]),
        lambda t: -radius * np.array([np.cos(t), np.sin(t), 0.0]),
    )


def decaying(horizon=10.0, step=0.05, amplitude=0.5):
    e = np.array([1.0, 0.0, 0.0])
    return TrajectoryHistory.from_function(
        step, horizon,
        lambda t: amplitude * np.exp(-t) * e,
        lambda t: -amplitude * np.exp(-t) * e,
        lambda t: amplitude * np.exp(-t) * e,
    )


class TestDecayFit:
    """Test log-log decay fits and majorants."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()
        self.times = np.linspace(1.0, 100.0, 200)

    def test_power_law(self):
        series = DiagnosticSeries("power", self.times, self.times ** -2.0)
        fit = self.engine.decay_fit(series, 1.0, 100.0, alpha_target=1.5)
        assert fit.beta == pytest.approx(2.0, abs=1e-2)
        assert fit.residual < 1e-8
        assert fit.amplitude == pytest.approx(1.0, rel=1e-6)
        assert fit.flag == DecayFlag.UPPER_BOUND_CONSISTENT
        assert fit.points == 200 and fit.excluded == 0

    def test_slow_decay_is_inconclusive(self):
        series = DiagnosticSeries("power", self.times, self.times ** -1.0)
        fit = self.engine.decay_fit(series, 10.0, 100.0, alpha_target=1.5, eps_tol=0.25)
        assert fit.beta == pytest.approx(1.0, abs=1e-6)
        assert fit.flag == DecayFlag.INCONCLUSIVE

    def test_vector_values_use_norm(self):
        values = np.outer(self.times ** -2.0, [3.0, 0.0, 4.0])
        fit = self.engine.decay_fit(DiagnosticSeries("vec", self.times, values), 1.0, 100.0)
        assert fit.beta == pytest.approx(2.0, abs=1e-6)
        assert fit.amplitude == pytest.approx(5.0, rel=1e-6)

    def test_exponential_decay_excludes_floor(self):
        times = np.arange(10.0, 50.5, 0.5)
        fit = self.engine.decay_fit(DiagnosticSeries("exp", times, np.exp(-times)), 10.0, 50.0)
        assert fit.beta > 5.0
        assert fit.excluded > 0
        assert fit.flag == DecayFlag.UPPER_BOUND_CONSISTENT

    def test_too_few_points(self):
        times = np.arange(1.0, 6.0)
        with pytest.raises(DiagnosticError, match="usable points"):
            self.engine.decay_fit(DiagnosticSeries("short", times, times ** -2.0), 1.0, 5.0)

    def test_invalid_window(self):
        series = DiagnosticSeries("power", self.times, self.times ** -2.0)
        with pytest.raises(ValueError):
            self.engine.decay_fit(series, 50.0, 10.0)

    def test_majorant_is_monotone(self):
        values = np.sin(self.times) / self.times
        m = self.engine.majorant(DiagnosticSeries("osc", self.times, values), alpha=1.0, eps=0.25)
        assert np.all(np.diff(m.values) >= 0.0)
        assert m.values[0] == pytest.approx(2.0 ** 0.75 * abs(values[0]))
        assert m.metadata["alpha"] == 1.0


class TestRemainderNorm:
    """Test the displaced-density norm."""

    def setup_method(self):
        self.density = make_density("bump", radius=1.0, charge=1.0)

    def test_zero_displacement(self):
        assert remainder_norm(self.density, np.zeros(3), np.zeros(3)) == 0.0

    def test_zero_density(self):
        assert remainder_norm(make_density("zero"), np.zeros(3), np.ones(3)) == 0.0

    def test_small_displacement_matches_gradient(self):
        # ||rho(. - q) - rho|| ~ |delta| sqrt(||grad rho||^2 / 3) for a radial density
        delta = 1e-3
        nodes, weights = ball_rule(1.0, self.density.quadrature_order)
        grad_sq = float(np.sum(weights * np.sum(self.density.gradient(nodes) ** 2, axis=1)))
        value = remainder_norm(self.density, np.zeros(3), np.array([0.0, delta, 0.0]))
        assert value == pytest.approx(delta * np.sqrt(grad_sq / 3.0), rel=2e-2)


class TestRelaxation:
    """Test speed and acceleration envelopes."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()

    def test_circling_does_not_relax(self):
        speed, accel, summary = self.engine.relaxation_series(make_run(circling()))
        assert np.allclose(speed.values, 0.3, atol=1e-12)
        assert np.allclose(accel.values, 0.3, atol=1e-12)
        assert summary.envelope_ratio == pytest.approx(1.0, abs=1e-9)
        assert summary.theta == 0.0

    def test_decaying_motion_relaxes(self):
        _, _, summary = self.engine.relaxation_series(make_run(decaying()), window=0.2)
        assert summary.early_envelope == pytest.approx(0.5)
        assert summary.envelope_ratio < 1e-3

    def test_rest(self):
        _, _, summary = self.engine.relaxation_series(make_run(at_rest()))
        assert summary.peak_speed == 0.0 and summary.envelope_ratio == 0.0


class TestScatteringRemainder:
    """Test the source remainder and its bound."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()
        self.density = make_density("bump", radius=1.0, charge=1.0)

    def test_unrelaxed_run_rejected(self):
        with pytest.raises(DiagnosticError, match="not relaxed"):
            self.engine.scattering_remainder(make_run(circling(), self.density), alpha=1.5)

    def test_rest_has_zero_bound(self):
        norms, bound = self.engine.scattering_remainder(make_run(at_rest(), self.density), alpha=1.5)
        assert not np.any(norms.values)
        assert not np.any(bound.values)
        assert bound.metadata["tail"] == 0.0

    def test_bound_decreases(self):
        norms, bound = self.engine.scattering_remainder(make_run(decaying(), self.density), alpha=1.5, t=1.0)
        assert norms.values[0] > norms.values[-1] > 0.0
        assert bound.times[0] >= 1.0
        assert np.all(np.diff(bound.values) <= 1e-15)
        assert bound.values[-1] == pytest.approx(bound.metadata["tail"])
        assert bound.metadata["remainder_beta"] > 1.0


class TestParticleEnergies:
    """Test local energies and norms of uncoupled runs."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()
        self.run = make_run(circling())

    def test_local_energy_of_free_particle(self):
        # p^2 / 2 + nu0^2 q^2 / 2 with |p| = |q| = 0.3
        assert self.engine.local_energy(self.run, 2.0, 3.0) == pytest.approx(0.09, rel=1e-9)

    def test_local_energy_preconditions(self):
        with pytest.raises(ValueError, match="must exceed"):
            self.engine.local_energy(self.run, 1.0, 3.0)
        with pytest.raises(ValueError):
            self.engine.local_energy(self.run, 2.0, -1.0)

    def test_weighted_norm(self):
        norm = self.engine.weighted_deviation_norm(self.run, 1.0, 2.0, 3.0)
        assert norm.field_part == 0.0 and norm.momentum_part == 0.0
        assert norm.value == pytest.approx(0.6, rel=1e-9)
        assert norm.tail_bound == 0.0

    def test_weighted_norm_preconditions(self):
        with pytest.raises(ValueError, match="alpha"):
            self.engine.weighted_deviation_norm(self.run, 0.0, 2.0, 3.0)
        with pytest.raises(ValueError, match="R_trunc"):
            self.engine.weighted_deviation_norm(self.run, 1.0, 2.0, 2.0)

    def test_weighted_norm_series(self):
        series = self.engine.weighted_norm_series(self.run, 1.0, [1.0, 2.0], 3.0)
        assert np.allclose(series.values, 0.6)
        assert series.metadata["truncation_radius"] == 3.0

    def test_attraction_seminorm(self):
        assert self.engine.attraction_seminorm(self.run, 2.0, 1.0) == pytest.approx(0.3, rel=1e-9)


class TestFarField:
    """Test the radiation functional, the convolution identity and the wave zone."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()
        self.density = make_density("bump", radius=1.0, charge=1.0)
        self.run = make_run(circling(), self.density)
        self.grid = sphere_rule(4, 8)
        self.fine = make_run(circling(step=0.01), self.density)

    def test_g_omega_closed_form(self):
        # r = 0.3 cos(tau) along omega = e1
        omega = np.array([1.0, 0.0, 0.0])
        tau = np.linspace(2.0, 9.0, 8)
        theta = tau - 0.3 * np.cos(tau)
        expected = -0.3 * np.cos(tau) / (1.0 + 0.3 * np.sin(tau)) ** 3
        assert np.allclose(self.engine.g_omega(self.fine, omega, theta), expected, atol=1e-3)

    def test_g_omega_vanishes_off_plane(self):
        value = self.engine.g_omega(self.run, [0.0, 0.0, 1.0], 5.0)
        assert abs(value) < 1e-12

    def test_convolution_identity(self):
        for omega in ([1.0, 0.0, 0.0], [0.0, 0.6, 0.8]):
            check = self.engine.convolution_check(self.fine, omega, 5.0)
            assert check.diff < 1e-3 * abs(check.rhs) + 1e-5

    def test_convolution_zero_density(self):
        check = self.engine.convolution_check(make_run(circling()), [1.0, 0.0, 0.0], 5.0)
        assert check.lhs == 0.0 and check.rhs == 0.0

    def test_radiation_is_cumulative(self):
        series = self.engine.radiation_functional(self.run, 6.0, omega_grid=self.grid)
        assert series.values[0] == 0.0
        assert series.values[-1] > 0.0
        assert np.all(np.diff(series.values) >= 0.0)
        assert series.metadata["directions"] == 32

    def test_radiation_window(self):
        t_start = self.engine.field_engine.amplitude_window(self.density, self.run.history, self.grid[0])[0]
        with pytest.raises(ValueError, match="radiation window"):
            self.engine.radiation_functional(self.run, t_start, omega_grid=self.grid)
        with pytest.raises(ValueError, match="far-field method"):
            self.engine.radiation_functional(self.run, 6.0, omega_grid=self.grid, method="cone")

    @pytest.mark.slow
    def test_radiation_methods_agree(self):
        axial = self.engine.radiation_functional(self.run, 4.0, omega_grid=self.grid)
        ball = self.engine.radiation_functional(self.run, 4.0, omega_grid=self.grid, method="ball")
        assert np.allclose(axial.values, ball.values, rtol=1e-3, atol=1e-9)

    def test_wave_zone_residuals_shrink(self):
        frame = self.engine.wave_zone_residuals(self.run, [1.0, 0.0, 0.0], 5.0, [20.0, 80.0])
        assert list(frame["radius"]) == [20.0, 80.0]
        assert frame["pi_residual"].iloc[1] < 0.5 * frame["pi_residual"].iloc[0]
        assert frame["grad_residual"].iloc[1] < 0.5 * frame["grad_residual"].iloc[0]


class TestEnergyAudit:
    """Test local energy and flux of a charge at rest in its own field."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()
        self.density = make_density("bump", radius=1.0, charge=1.0)
        self.run = make_run(at_rest(), self.density, matched_field(self.density, np.zeros(3)))

    @pytest.mark.slow
    def test_local_energy_of_stationary_state(self):
        # the field energy beyond R is Q^2 / (8 pi R)
        R = 3.0
        expected = stationary_energy(self.density, self.run.scenario.potential, np.zeros(3)) - 1.0 / (8.0 * np.pi * R)
        assert self.engine.local_energy(self.run, R, 5.0) == pytest.approx(expected, rel=1e-3)

    @pytest.mark.slow
    def test_flux_balance_at_rest(self):
        balance = self.engine.flux_balance(self.run, 1.5, 2.5, 3.5)
        assert abs(balance.flux_integral) < 1e-8
        assert balance.mismatch < 1e-6
        assert set(balance.parts) == {"rr", "rK", "Kr", "KK"}

    def test_flux_balance_window(self):
        with pytest.raises(ValueError):
            self.engine.flux_balance(self.run, 1.5, 2.0, 1.0)

@lru_cache(maxsize=None)
def coupled_run(charge, nu0, q0, p0, h, T, plane=False, kind="matched", phi_amplitude=0.0):
    density = make_density("bump", radius=1.0, charge=charge) if charge else make_density("zero")
    data = make_field_data(kind if charge else "zero", density, np.zeros(3), phi_amplitude=phi_amplitude, center=(4.0, 0.0, 0.0))
    scenario = Scenario(density, make_potential("harmonic", nu0=nu0), data)
    return DynamicsEngine().integrate(scenario, q0, p0, h, T, plane=plane)


class TestSimulatedRuns:
    """Diagnostics of runs produced by the delay integrator."""

    def setup_method(self):
        self.engine = DiagnosticsEngine()

    def test_coupling_damps_oscillation(self):
        _, _, coupled = self.engine.relaxation_series(coupled_run(2.0, 2.0, (0.3, 0.0, 0.0), (0.0, 0.0, 0.0), 0.1, 40.0))
        _, _, free = self.engine.relaxation_series(coupled_run(0.0, 2.0, (0.3, 0.0, 0.0), (0.0, 0.0, 0.0), 0.1, 40.0))
        assert coupled.envelope_ratio < 0.2
        assert 0.9 <= free.envelope_ratio <= 1.1

    @pytest.mark.slow
    def test_weak_coupling_damps_slowly(self):
        run = coupled_run(1.0, 1.0, (1.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.05, 400.0)
        _, _, summary = self.engine.relaxation_series(run)
        assert summary.envelope_ratio < 0.2

    def test_relaxed_speed_decays_fast_enough(self):
        run = coupled_run(2.0, 2.0, (0.3, 0.0, 0.0), (0.0, 0.6, 0.0), 0.1, 40.0, True, "bump", 0.05)
        speed, _, _ = self.engine.relaxation_series(run)
        fit = self.engine.decay_fit(speed, 20.0, 40.0, alpha_target=1.5, eps_tol=0.25)
        assert fit.flag == DecayFlag.UPPER_BOUND_CONSISTENT
        assert np.allclose(run.history.positions[:, 2], 0.0)

    def test_scattering_bound_of_relaxed_run(self):
        run = coupled_run(2.0, 2.0, (0.3, 0.0, 0.0), (0.0, 0.6, 0.0), 0.1, 40.0, True, "bump", 0.05)
        norms, bound = self.engine.scattering_remainder(run, alpha=1.5)
        assert norms.values[0] > norms.values[-1]
        assert np.all(np.diff(bound.values) <= 1e-15)
        fit = self.engine.decay_fit(bound, 10.0, 30.0, alpha_target=0.5, eps_tol=0.25)
        assert fit.beta >= 0.25

    @pytest.mark.slow
    def test_weighted_norm_decays(self):
        run = coupled_run(2.0, 2.0, (0.3, 0.0, 0.0), (0.0, 0.6, 0.0), 0.1, 40.0, True, "bump", 0.05)
        reach = 2.0 * (run.history.max_radius() + 1.0) + 1.0
        series = self.engine.weighted_norm_series(run, 0.5, np.linspace(10.0, 30.0, 9), reach)
        fit = self.engine.decay_fit(series, 10.0, 30.0, alpha_target=0.5, eps_tol=0.25)
        assert fit.flag == DecayFlag.UPPER_BOUND_CONSISTENT

    def test_flux_mismatch_shrinks_under_refinement(self, monkeypatch):
        mismatches = []
        for scale in (1, 2):
            monkeypatch.setattr(settings, "energy_panel_order", 3 * scale)
            monkeypatch.setattr(settings, "flux_panel_order", 3 * scale)
            field = FieldEngine(ball_order=(6 * scale, 6 * scale, 12 * scale))
            engine = DiagnosticsEngine(field, sphere_order=(6 * scale, 12 * scale))
            run = coupled_run(1.0, 1.0, (0.5, 0.0, 0.0), (0.0, 0.0, 0.0), 0.05, 6.0, kind="zero")
            mismatches.append(engine.flux_balance(run, 3.0, 0.0, 2.0).mismatch)
        assert mismatches[1] < mismatches[0]

    @pytest.mark.slow
    def test_flux_balance_of_radiating_run(self):
        run = coupled_run(1.0, 1.0, (0.5, 0.0, 0.0), (0.0, 0.0, 0.0), 0.05, 32.0, kind="zero")
        balance = self.engine.flux_balance(run, 6.0, 0.0, 20.0)
        assert balance.mismatch <= 1e-3 * (abs(balance.delta_energy) + abs(balance.flux_integral)) + 1e-6



if __name__ == "__main__":
    pytest.main([__file__])
