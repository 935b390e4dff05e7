"""
Unit tests for the initial-field catalog.
"""
import numpy as np
import pytest

from core_model import coulomb_field, make_density
from field_data import FIELD_KINDS, make_field_data, power_component, stationary_deviation, zero_field
from models import DecayClass

POINTS = np.array([[0.0, 0.0, 0.0], [0.3, -0.4, 0.2], [1.5, 0.5, -2.0], [6.0, 0.0, 0.0]])


class TestCatalog:
    """Test catalog entries and their decay classes."""

    def setup_method(self):
        self.density = make_density("bump", radius=1.0, charge=1.0)

    def test_zero(self):
        data = make_field_data("zero", self.density, (0.0, 0.0, 0.0))
        assert data.is_zero
        assert np.all(data.phi0(POINTS) == 0.0) and np.all(data.grad_phi0(POINTS) == 0.0)
        assert data.decay_class.kind == "zero"

    def test_bump_amplitudes(self):
        data = make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.1, pi_amplitude=0.2,
                               radius=1.0)
        assert data.phi0(POINTS[:1])[0] == pytest.approx(0.1 * np.exp(-1.0))
        assert data.pi0(POINTS[:1])[0] == pytest.approx(0.2 * np.exp(-1.0))
        assert data.phi0(POINTS[2:]).tolist() == [0.0, 0.0]
        assert data.decay_class == DecayClass("compact", radius=1.0)

    def test_bump_without_momentum(self):
        data = make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.3)
        assert data.phi0(POINTS[:1])[0] == pytest.approx(0.3 * np.exp(-1.0))
        assert np.all(data.pi0(POINTS) == 0.0)

    def test_bump_without_amplitudes_is_zero(self):
        data = make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.0, pi_amplitude=0.0)
        assert data.is_zero
        assert np.all(data.phi0(POINTS) == 0.0)

    def test_gradient_and_hessian_consistent(self):
        data = make_field_data("power", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.5, pi_amplitude=0.1,
                               sigma=2.5, center=(0.2, 0.0, -0.1))
        x = np.array([[0.7, -0.3, 0.4]])
        eps = 1e-6
        grad = np.array([(data.phi0(x + eps * e) - data.phi0(x - eps * e))[0] / (2.0 * eps) for e in np.eye(3)])
        hess = np.array([(data.grad_phi0(x + eps * e) - data.grad_phi0(x - eps * e))[0] / (2.0 * eps)
                         for e in np.eye(3)])
        assert np.allclose(data.grad_phi0(x)[0], grad, atol=1e-8)
        assert np.allclose(data.hess_phi0(x)[0], hess, atol=1e-6)
        grad_pi = np.array([(data.pi0(x + eps * e) - data.pi0(x - eps * e))[0] / (2.0 * eps) for e in np.eye(3)])
        assert np.allclose(data.grad_pi0(x)[0], grad_pi, atol=1e-8)

    def test_plateau_levels(self):
        data = make_field_data("plateau", self.density, (0.0, 0.0, 0.0), pi_amplitude=0.05, radius=1.0,
                               width=0.5)
        x = np.array([[0.5, 0.0, 0.0], [1.2, 0.0, 0.0], [1.6, 0.0, 0.0]])
        values = data.pi0(x)
        assert values[0] == pytest.approx(0.05)
        assert 0.0 < values[1] < 0.05
        assert values[2] == 0.0
        assert data.decay_class.radius == pytest.approx(1.5)

    def test_matched_field_is_coulomb(self):
        q0 = (0.5, 0.0, 0.0)
        data = make_field_data("matched", self.density, q0)
        assert np.allclose(data.phi0(POINTS), coulomb_field(self.density, q0, POINTS))
        assert data.decay_class.kind == "coulomb"
        assert data.decay_class.alpha_sup == pytest.approx(0.5)
        assert not data.decay_class.admits(1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown field data"):
            make_field_data("vortex", self.density, (0.0, 0.0, 0.0))

    def test_every_kind_documented(self):
        for kind in FIELD_KINDS:
            make_field_data(kind, self.density, (0.0, 0.0, 0.0), phi_amplitude=0.1, pi_amplitude=0.1)


class TestDecayClasses:
    """Test weighted-class membership and deviations."""

    def setup_method(self):
        self.density = make_density("bump", radius=1.0, charge=1.0)

    def test_power_law_threshold(self):
        decay = DecayClass("power", sigma=2.5)
        assert decay.alpha_sup == pytest.approx(1.0)
        assert decay.admits(0.9) and not decay.admits(1.0)
        assert DecayClass("compact", radius=2.0).admits(100.0)

    def test_power_requires_finite_energy(self):
        with pytest.raises(ValueError, match="sigma"):
            power_component(np.zeros(3), 1.5, 1.0, 1.0)

    def test_power_moment_matches_density(self):
        comp = power_component(np.zeros(3), 2.5, 0.0, 0.7)
        w, eps = 1.3, 1e-6
        slope = (comp.pi_moment(w + eps) - comp.pi_moment(w - eps)) / (2.0 * eps)
        assert slope == pytest.approx(w * comp.pi(w), rel=1e-7)
        log_case = power_component(np.zeros(3), 2.0, 0.0, 0.7)
        slope = (log_case.pi_moment(w + eps) - log_case.pi_moment(w - eps)) / (2.0 * eps)
        assert slope == pytest.approx(w * log_case.pi(w), rel=1e-7)

    def test_matched_deviation_at_minimum_vanishes(self):
        data = make_field_data("matched", self.density, (0.0, 0.0, 0.0))
        deviation = stationary_deviation(data, self.density, np.zeros(3))
        assert deviation.decay_class.kind == "zero"
        assert np.allclose(deviation.phi0(POINTS), 0.0, atol=1e-15)

    def test_matched_deviation_elsewhere_has_dipole_tail(self):
        data = make_field_data("matched", self.density, (0.5, 0.0, 0.0))
        deviation = stationary_deviation(data, self.density, np.zeros(3))
        assert deviation.decay_class == DecayClass("power", sigma=3.0)

    def test_compact_deviation_keeps_coulomb_tail(self):
        data = make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.1)
        deviation = stationary_deviation(data, self.density, np.zeros(3))
        assert deviation.decay_class.kind == "coulomb"
        assert stationary_deviation(zero_field(), self.density, np.zeros(3)).decay_class.kind == "coulomb"

    def test_plane_symmetry_flag(self):
        assert make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.1).is_plane_symmetric
        assert not make_field_data("bump", self.density, (0.0, 0.0, 0.0), phi_amplitude=0.1,
                                   center=(0.0, 0.0, 1.0)).is_plane_symmetric


if __name__ == "__main__":
    pytest.main([__file__])
