"""
Unit tests for the retarded, free and far fields.
"""
import numpy as np
import pytest

from core_model import coulomb_field, coulomb_gradient, make_density
from field_data import make_field_data
from field_engine import FieldEngine, radial_free_wave, theta_threshold
from models import ConeViolationError, HistoryCoverageError
from trajectory import TrajectoryHistory
from utils import fibonacci_directions

OMEGA = np.array([0.0, 0.6, 0.8])


def at_rest(horizon=6.0, step=0.1, quiescent_past=False):
    zero = lambda t: np.zeros(3)
    return TrajectoryHistory.from_function(step, horizon, zero, zero, zero, quiescent_past=quiescent_past)


def circling(horizon=12.0, step=0.05, radius=0.3):
    return TrajectoryHistory.from_function(
        step, horizon,
        lambda t: radius * np.array([np.cos(t), np.sin(t), 0.0]),
        lambda t: radius * np.array([-np.sin(t), np.cos(t), 0.0]),
        lambda t: -radius * np.array([np.cos(t), np.sin(t), 0.0]),
    )


class TestThetaThreshold:
    """Test the cone opening."""

    def test_subluminal(self):
        assert theta_threshold(0.5, 0.01) == 0.0

    def test_superluminal(self):
        assert theta_threshold(2.0, 0.01) == pytest.approx(0.01 + np.sqrt(0.75))

    def test_invalid_eps(self):
        with pytest.raises(ValueError):
            theta_threshold(2.0, 0.2)
        with pytest.raises(ValueError):
            theta_threshold(0.5, 0.0)


class TestRetardedField:
    """Test the retarded potential of a moving charge."""

    def setup_method(self):
        self.engine = FieldEngine()
        self.density = make_density("bump", radius=1.0, charge=1.0)

    def test_charge_at_rest_settles_to_coulomb(self):
        x = np.array([[2.0, 0.0, 0.0], [0.0, 1.5, 1.5], [0.3, 0.0, 0.0]])
        phi, pi, grad = self.engine.lw_field(self.density, at_rest(), x, 5.0)
        assert np.allclose(phi, coulomb_field(self.density, np.zeros(3), x), rtol=1e-5, atol=1e-6)
        assert np.allclose(grad, coulomb_gradient(self.density, np.zeros(3), x), rtol=1e-5, atol=1e-5)
        assert np.allclose(pi, 0.0, atol=1e-12)

    def test_causality(self):
        # the light cone from the support has not reached x yet
        phi, pi, grad = self.engine.lw_field(self.density, at_rest(), np.array([[5.0, 0.0, 0.0]]), 2.0)
        assert phi[0] == 0.0 and pi[0] == 0.0 and np.all(grad == 0.0)

    def test_zero_time(self):
        phi, _, _ = self.engine.lw_field(self.density, at_rest(), np.zeros((1, 3)), 0.0)
        assert phi[0] == 0.0

    def test_zero_density(self):
        phi, pi, grad = self.engine.lw_field(make_density("zero"), at_rest(), np.zeros((2, 3)), 3.0)
        assert phi.shape == (2,) and grad.shape == (2, 3)
        assert not np.any(phi) and not np.any(pi)

    def test_growing_field_rate(self):
        # during switch-on the potential at the centre grows at rate pi
        x = np.zeros((1, 3))
        h = 1e-4
        before = self.engine.lw_field(self.density, at_rest(), x, 0.5 - h)[0]
        after = self.engine.lw_field(self.density, at_rest(), x, 0.5 + h)[0]
        pi = self.engine.lw_field(self.density, at_rest(), x, 0.5)[1]
        assert pi[0] == pytest.approx((after[0] - before[0]) / (2.0 * h), rel=1e-4)


class TestFreeField:
    """Test the Kirchhoff part."""

    def setup_method(self):
        self.engine = FieldEngine()
        density = make_density("bump")
        self.data = make_field_data("bump", density, (0.0, 0.0, 0.0), phi_amplitude=0.2, pi_amplitude=0.1,
                                    radius=2.0)

    def test_initial_values(self):
        x = np.array([[0.5, 0.0, 0.0], [0.0, 1.0, 1.0]])
        phi, pi, grad = self.engine.kirchhoff_field_radial(self.data, x, 0.0)
        assert np.allclose(phi, self.data.phi0(x), atol=1e-12)
        assert np.allclose(pi, self.data.pi0(x), atol=1e-12)
        assert np.allclose(grad, self.data.grad_phi0(x), atol=1e-10)

    def test_quadrature_matches_radial(self):
        x = np.array([[0.5, 0.0, 0.0], [0.2, -0.3, 0.4]])
        radial = self.engine.kirchhoff_field_radial(self.data, x, 0.7)
        spherical = self.engine.kirchhoff_field(self.data, x, 0.7)
        for a, b in zip(radial, spherical):
            assert np.allclose(a, b, atol=1e-5)

    def test_strong_huygens(self):
        x = np.array([[0.5, 0.0, 0.0], [3.0, 1.0, -1.0]])
        t = np.linalg.norm(x, axis=1).max() + 2.0 + 0.5
        phi, pi, grad, rate = self.engine.kirchhoff_field_radial(self.data, x, t, with_rate=True)
        assert np.max(np.abs(phi)) < 1e-10 and np.max(np.abs(pi)) < 1e-10
        assert np.max(np.abs(grad)) < 1e-10 and np.max(np.abs(rate)) < 1e-10

    def test_centre_of_symmetry(self):
        comp = self.data.components[0]
        tiny = np.array([[1e-9, 0.0, 0.0]])
        near = np.array([[1e-3, 0.0, 0.0]])
        phi_c = radial_free_wave(comp, tiny, 0.6)[0]
        phi_n = radial_free_wave(comp, near, 0.6)[0]
        assert phi_c[0] == pytest.approx(phi_n[0], abs=1e-5)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            self.engine.kirchhoff_field(self.data, np.zeros((1, 3)), -1.0)
        with pytest.raises(ValueError):
            self.engine.kirchhoff_field_radial(self.data, np.zeros((1, 3)), -1.0)

    def test_field_eval_sums_parts(self):
        density = make_density("bump")
        x = np.array([[2.0, 0.0, 0.0]])
        sample = self.engine.field_eval(density, at_rest(), self.data, x, 4.0)
        assert np.allclose(sample.phi, sample.retarded.phi + sample.kirchhoff.phi)
        assert np.allclose(sample.grad_phi, sample.retarded.grad_phi + sample.kirchhoff.grad_phi)
        with pytest.raises(ValueError):
            self.engine.field_eval(density, at_rest(), self.data, x, 4.0, kirchhoff_method="fourier")


class TestFarField:
    """Test the three far-field amplitude formulas."""

    def setup_method(self):
        self.engine = FieldEngine()
        self.density = make_density("bump", radius=1.0, charge=1.0)
        self.history = circling()

    def test_window(self):
        lo, hi = self.engine.amplitude_window(self.density, self.history, OMEGA)
        center, spread = self.history.bounding_ball()
        support = 1.0 + spread
        assert spread == pytest.approx(0.3 * np.sqrt(2.0), rel=1e-3)
        assert lo == pytest.approx(support - OMEGA @ center, rel=1e-12)
        assert hi == pytest.approx(12.0 - support - OMEGA @ center, rel=1e-12)

    def test_general_matches_axial(self):
        general = self.engine.farfield_amplitude(self.density, self.history, OMEGA, 5.0)
        axial = self.engine.farfield_amplitude_axial(self.density, self.history, OMEGA, 5.0)
        assert abs(general) > 1e-4
        assert general == pytest.approx(axial, rel=1e-3)

    def test_general_matches_axial_in_plane(self):
        # in-plane directions see the full swing of the bump across the support ball
        omega = np.array([1.0, 0.0, 0.0])
        general = self.engine.farfield_amplitude(self.density, self.history, omega, 5.0)
        axial = self.engine.farfield_amplitude_axial(self.density, self.history, omega, 5.0)
        assert general == pytest.approx(axial, rel=1e-3)

    def test_general_matches_axial_on_grid(self):
        dirs = fibonacci_directions(20)
        lo, hi = self.engine.amplitude_window(self.density, self.history, dirs)
        times = np.linspace(lo, hi, 6)
        general = np.stack([self.engine.farfield_amplitude(self.density, self.history, dirs, t) for t in times],
                           axis=1)
        axial = self.engine.farfield_amplitude_axial(self.density, self.history, dirs, times)
        scale = np.max(np.abs(axial), axis=1, keepdims=True)
        assert np.all(np.abs(general - axial) <= 1e-3 * scale + 1e-8)

    def test_cone_matches_axial(self):
        cone = self.engine.farfield_amplitude_cone(self.density, self.history, OMEGA, 5.0)
        axial = self.engine.farfield_amplitude_axial(self.density, self.history, OMEGA, 5.0)
        assert cone == pytest.approx(axial, rel=1e-3)

    def test_axial_shapes(self):
        omega = np.array([OMEGA, [0.0, 0.0, 1.0]])
        out = self.engine.farfield_amplitude_axial(self.density, self.history, omega, np.array([4.0, 5.0, 6.0]))
        assert out.shape == (2, 3)
        # motion in the x1-x2 plane does not radiate along x3
        assert np.allclose(out[1], 0.0, atol=1e-12)

    def test_charge_at_rest_does_not_radiate(self):
        assert self.engine.farfield_amplitude(self.density, at_rest(), OMEGA, 3.0) == pytest.approx(0.0, abs=1e-14)

    def test_window_violation(self):
        with pytest.raises(HistoryCoverageError):
            self.engine.farfield_amplitude(self.density, self.history, OMEGA, 0.2)

    def test_non_unit_direction(self):
        with pytest.raises(ValueError):
            self.engine.farfield_amplitude(self.density, self.history, np.array([1.0, 1.0, 0.0]), 5.0)

    def test_cone_rejects_flat_directions(self):
        fast = TrajectoryHistory.from_function(0.1, 4.0, lambda t: np.array([2.0 * t, 0.0, 0.0]),
                                               lambda t: np.array([2.0, 0.0, 0.0]), lambda t: np.zeros(3))
        with pytest.raises(ConeViolationError):
            self.engine.farfield_amplitude_cone(self.density, fast, np.array([1.0, 0.0, 0.0]), 2.0)

    def test_cone_needs_planar_motion(self):
        tilted = TrajectoryHistory.from_function(0.1, 8.0, lambda t: np.array([0.0, 0.0, 0.1 * np.sin(t)]),
                                                 lambda t: np.array([0.0, 0.0, 0.1 * np.cos(t)]),
                                                 lambda t: np.array([0.0, 0.0, -0.1 * np.sin(t)]))
        with pytest.raises(ValueError, match="planar"):
            self.engine.farfield_amplitude_cone(self.density, tilted, OMEGA, 4.0)


if __name__ == "__main__":
    pytest.main([__file__])
