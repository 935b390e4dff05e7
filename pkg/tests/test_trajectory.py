"""
Unit tests for the trajectory history.
"""
import numpy as np
import pytest

from models import HistoryCoverageError
from trajectory import KNOT_COLUMNS, TrajectoryHistory


def circle(t):
    return np.array([np.cos(t), np.sin(t), 0.0])


def circle_velocity(t):
    return np.array([-np.sin(t), np.cos(t), 0.0])


class TestTrajectoryHistory:
    """Test knots, interpolation and coverage checks."""

    def setup_method(self):
        self.history = TrajectoryHistory.from_function(0.05, 2.0, circle, circle_velocity,
                                                       lambda t: -circle(t))

    def test_knots(self):
        assert len(self.history) == 41
        assert self.history.last_time == pytest.approx(2.0)
        assert self.history.speed_bound == pytest.approx(1.0)
        assert self.history.max_radius() == pytest.approx(1.0)

    def test_hermite_accuracy_between_knots(self):
        t = np.array([0.025, 0.6125, 1.9875])
        q, v, a = self.history.interpolate(t)
        expected = np.array([circle(s) for s in t])
        assert np.max(np.abs(q - expected)) < 1e-6
        assert np.max(np.abs(v - np.array([circle_velocity(s) for s in t]))) < 1e-3
        assert q.shape == (3, 3) and a.shape == (3, 3)

    def test_interpolation_order_under_refinement(self):
        # q is fourth order between knots, its derivative third order
        q_errors, v_errors = [], []
        for step in (0.1, 0.05, 0.025):
            history = TrajectoryHistory.from_function(step, 2.0, circle, circle_velocity, lambda t: -circle(t))
            quarter = (np.arange(round(2.0 / step)) + 0.25) * step
            q, v, _ = history.interpolate(quarter)
            q_errors.append(np.max(np.abs(q - np.array([circle(s) for s in quarter]))))
            v_errors.append(np.max(np.abs(v - np.array([circle_velocity(s) for s in quarter]))))
        q_ratios = np.array(q_errors[:-1]) / np.array(q_errors[1:])
        v_ratios = np.array(v_errors[:-1]) / np.array(v_errors[1:])
        assert np.all((q_ratios > 14.0) & (q_ratios < 18.0))
        assert np.all((v_ratios > 6.5) & (v_ratios < 9.5))

    def test_knot_values_exact(self):
        q, v, _ = self.history.interpolate(np.array([0.5]))
        assert np.allclose(q[0], circle(0.5), atol=1e-14)
        assert np.allclose(v[0], circle_velocity(0.5), atol=1e-14)

    def test_beyond_last_knot(self):
        with pytest.raises(HistoryCoverageError):
            self.history.interpolate(2.1)

    def test_negative_time_needs_quiescent_past(self):
        with pytest.raises(HistoryCoverageError):
            self.history.interpolate(-0.1)

    def test_quiescent_past(self):
        history = TrajectoryHistory.from_function(0.1, 1.0, circle, circle_velocity,
                                                  lambda t: -circle(t), quiescent_past=True)
        q, v, a = history.interpolate(np.array([-3.0]))
        assert np.allclose(q[0], circle(0.0))
        assert np.allclose(v[0], 0.0) and np.allclose(a[0], 0.0)

    def test_snapshot_is_read_only(self):
        with pytest.raises(RuntimeError):
            self.history.append(np.zeros(3), np.zeros(3), np.zeros(3))

    def test_integrate_position(self):
        # int_0^t cos = sin t
        value = self.history.integrate_position(np.array([1.0, -1.0]))
        assert value[0, 0] == pytest.approx(np.sin(1.0), abs=1e-7)
        assert np.allclose(value[1], 0.0)

    def test_bounding_ball(self):
        center, radius = self.history.bounding_ball()
        assert radius <= 1.0 + 1e-12
        assert np.all(np.linalg.norm(self.history.positions - center, axis=1) <= radius + 1e-12)


class TestWriterSide:
    """Test appending and provisional knots."""

    def setup_method(self):
        self.history = TrajectoryHistory(0.1, np.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros(3), capacity=2)

    def test_single_knot_is_constant(self):
        q, v, _ = self.history.interpolate(np.array([0.0]))
        assert np.allclose(q, 0.0) and np.allclose(v[0], [1.0, 0.0, 0.0])

    def test_growth_beyond_capacity(self):
        for n in range(1, 6):
            self.history.append([0.1 * n, 0.0, 0.0], [1.0, 0.0, 0.0], np.zeros(3))
        assert len(self.history) == 6
        q, _, _ = self.history.interpolate(0.35)
        assert q[0] == pytest.approx(0.35)

    def test_provisional_extends_range(self):
        self.history.set_provisional(0.05, [0.05, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert self.history.last_time == pytest.approx(0.05)
        q, _, _ = self.history.interpolate(0.04)
        assert q[0] == pytest.approx(0.04)
        self.history.append([0.1, 0.0, 0.0], [1.0, 0.0, 0.0], np.zeros(3))
        assert self.history.last_time == pytest.approx(0.1)

    def test_provisional_outside_step(self):
        with pytest.raises(ValueError):
            self.history.set_provisional(0.2, np.zeros(3), np.zeros(3))

    def test_invalid_step(self):
        with pytest.raises(ValueError):
            TrajectoryHistory(0.0, np.zeros(3), np.zeros(3), np.zeros(3))


class TestFrames:
    """Test knot tables."""

    def test_frame_columns(self):
        history = TrajectoryHistory.from_function(0.1, 0.5, circle, circle_velocity, lambda t: -circle(t))
        df = history.to_frame()
        assert list(df.columns) == KNOT_COLUMNS
        rebuilt = TrajectoryHistory.from_frame(df)
        assert np.array_equal(rebuilt.positions, history.positions)
        assert rebuilt.step == pytest.approx(0.1)

    def test_non_uniform_times_rejected(self):
        history = TrajectoryHistory.from_function(0.1, 0.5, circle, circle_velocity, lambda t: -circle(t))
        df = history.to_frame()
        df.loc[3, "t"] = 0.33
        with pytest.raises(ValueError, match="uniformly"):
            TrajectoryHistory.from_frame(df)


if __name__ == "__main__":
    pytest.main([__file__])
