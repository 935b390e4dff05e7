"""
Trajectory history: the memory of the delay system.
Single writer (the integrator) appends knots; readers work on snapshots.
"""
import threading
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import CubicHermiteSpline

from models import HistoryCoverageError

KNOT_COLUMNS = ["t", "q1", "q2", "q3", "v1", "v2", "v3", "a1", "a2", "a3"]


class TrajectoryHistory:
    """
    Uniformly spaced knots (t_n = n h, q_n, v_n, a_n) with C1 interpolation.

    q is cubic Hermite on (q, v), v its derivative, a linear between knots.
    While a step is in progress one provisional knot beyond the last one
    extends the interpolant.
    """

    def __init__(self, step: float, q0, v0, a0, quiescent_past: bool = False, capacity: int = 1024):
        if not step > 0.0:
            raise ValueError(f"history step must be positive, got {step}")
        self.step = float(step)
        self.quiescent_past = quiescent_past
        self._lock = threading.Lock()
        self._q = np.zeros((capacity, 3))
        self._v = np.zeros((capacity, 3))
        self._a = np.zeros((capacity, 3))
        self._count = 0
        self._speed_bound = 0.0
        self._lo = np.full(3, np.inf)
        self._hi = np.full(3, -np.inf)
        self._provisional: Optional[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = None
        self._frozen = False
        self._full_spline = None
        self._antiderivative = None
        self.append(q0, v0, a0)

    # -- writer -------------------------------------------------------------

    def append(self, q, v, a) -> None:
        """Append the knot at t = len(self) * step and drop any provisional extension."""
        if self._frozen:
            raise RuntimeError("history snapshot is read-only")
        q, v, a = (np.asarray(x, dtype=float).reshape(3) for x in (q, v, a))
        with self._lock:
            if self._count == len(self._q):
                self._grow()
            n = self._count
            self._q[n], self._v[n], self._a[n] = q, v, a
            self._count += 1
            self._speed_bound = max(self._speed_bound, float(np.linalg.norm(v)))
            self._lo = np.minimum(self._lo, q)
            self._hi = np.maximum(self._hi, q)
            self._provisional = None

    def _grow(self) -> None:
        size = 2 * len(self._q)
        for name in ("_q", "_v", "_a"):
            old = getattr(self, name)
            new = np.zeros((size, 3))
            new[: len(old)] = old
            setattr(self, name, new)

    def set_provisional(self, time: float, q, v, a=None) -> None:
        """Extend the interpolant over (t_last, time] with stage values."""
        if self._frozen:
            raise RuntimeError("history snapshot is read-only")
        last = (self._count - 1) * self.step
        end = self._count * self.step
        if not last < time <= end + 1e-9 * self.step:
            raise ValueError(f"provisional knot at {time} outside ({last}, {end}]")
        q = np.asarray(q, dtype=float).reshape(3)
        v = np.asarray(v, dtype=float).reshape(3)
        a = self._a[self._count - 1].copy() if a is None else np.asarray(a, dtype=float).reshape(3)
        with self._lock:
            self._provisional = (float(time), q, v, a)

    def clear_provisional(self) -> None:
        with self._lock:
            self._provisional = None

    # -- readers ------------------------------------------------------------

    def snapshot(self) -> "TrajectoryHistory":
        """Immutable copy of the completed knots."""
        with self._lock:
            copy = object.__new__(TrajectoryHistory)
            copy.step = self.step
            copy.quiescent_past = self.quiescent_past
            copy._lock = threading.Lock()
            copy._q = self._q[: self._count].copy()
            copy._v = self._v[: self._count].copy()
            copy._a = self._a[: self._count].copy()
            copy._count = self._count
            copy._speed_bound = self._speed_bound
            copy._lo = self._lo.copy()
            copy._hi = self._hi.copy()
            copy._provisional = None
            copy._frozen = True
            copy._full_spline = None
            copy._antiderivative = None
        return copy

    def __len__(self) -> int:
        return self._count

    @property
    def times(self) -> np.ndarray:
        return np.arange(self._count) * self.step

    @property
    def positions(self) -> np.ndarray:
        return self._q[: self._count].copy()

    @property
    def velocities(self) -> np.ndarray:
        return self._v[: self._count].copy()

    @property
    def accelerations(self) -> np.ndarray:
        return self._a[: self._count].copy()

    @property
    def last_knot(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(q, v, a) of the last completed knot."""
        n = self._count - 1
        return self._q[n].copy(), self._v[n].copy(), self._a[n].copy()

    @property
    def last_time(self) -> float:
        """End of the interpolation range, provisional knot included."""
        if self._provisional is not None:
            return self._provisional[0]
        return (self._count - 1) * self.step

    @property
    def speed_bound(self) -> float:
        bound = self._speed_bound
        if self._provisional is not None:
            bound = max(bound, float(np.linalg.norm(self._provisional[2])))
        return bound

    def bounding_ball(self) -> Tuple[np.ndarray, float]:
        """Centre and radius of the ball around the bounding box of all positions."""
        lo, hi = self._lo, self._hi
        if self._provisional is not None:
            lo = np.minimum(lo, self._provisional[1])
            hi = np.maximum(hi, self._provisional[1])
        return 0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo))

    def max_radius(self) -> float:
        """q0-bar: largest |q| over the record."""
        radius = float(np.max(np.linalg.norm(self._q[: self._count], axis=1)))
        if self._provisional is not None:
            radius = max(radius, float(np.linalg.norm(self._provisional[1])))
        return radius

    def _knots(self, first: int):
        t = np.arange(first, self._count) * self.step
        q, v, a = self._q[first:self._count], self._v[first:self._count], self._a[first:self._count]
        if self._provisional is not None:
            tp, qp, vp, ap = self._provisional
            t = np.append(t, tp)
            q, v, a = np.vstack([q, qp]), np.vstack([v, vp]), np.vstack([a, ap])
        return t, q, v, a

    def _check_range(self, t: np.ndarray) -> None:
        if t.size == 0:
            return
        if np.max(t) > self.last_time + 1e-12 * max(1.0, self.last_time):
            raise HistoryCoverageError(
                f"t={np.max(t):.6g} beyond the last knot at {self.last_time:.6g}"
            )
        if np.min(t) < 0.0 and not self.quiescent_past:
            raise HistoryCoverageError(f"t={np.min(t):.6g} < 0 without a quiescent past")

    def interpolate(self, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(q, v, a) at times t (any shape); result shapes t.shape + (3,)."""
        t = np.asarray(t, dtype=float)
        self._check_range(t)
        past = t < 0.0
        tc = np.clip(t, 0.0, self.last_time)

        if self._count + (self._provisional is not None) < 2:
            q = np.broadcast_to(self._q[0], t.shape + (3,)).copy()
            v = np.broadcast_to(self._v[0], t.shape + (3,)).copy()
            a = np.broadcast_to(self._a[0], t.shape + (3,)).copy()
        else:
            spline, deriv, tk, ak = self._spline_for(tc)
            q, v = spline(tc), deriv(tc)
            a = np.stack([np.interp(tc, tk, ak[:, i]) for i in range(3)], axis=-1)

        if np.any(past):
            q = np.where(past[..., None], self._q[0], q)
            v = np.where(past[..., None], 0.0, v)
            a = np.where(past[..., None], 0.0, a)
        return q, v, a

    def _spline_for(self, tc: np.ndarray):
        if self._frozen:
            if self._full_spline is None:
                tk, qk, vk, ak = self._knots(0)
                spline = CubicHermiteSpline(tk, qk, vk, axis=0)
                self._full_spline = (spline, spline.derivative(), tk, ak)
            return self._full_spline
        first = 0
        if tc.size:
            first = int(max(0, min(self._count - 2, np.floor(np.min(tc) / self.step) - 1)))
        tk, qk, vk, ak = self._knots(first)
        spline = CubicHermiteSpline(tk, qk, vk, axis=0)
        return spline, spline.derivative(), tk, ak

    def integrate_position(self, t) -> np.ndarray:
        """int_0^t q(s) ds (zero for t <= 0); used as the source antiderivative of linear runs."""
        t = np.asarray(t, dtype=float)
        self._check_range(np.maximum(t, 0.0))
        if self._count + (self._provisional is not None) < 2:
            return np.clip(t, 0.0, None)[..., None] * self._q[0]
        if self._frozen and self._antiderivative is not None:
            antiderivative = self._antiderivative
        else:
            tk, qk, vk, _ = self._knots(0)
            antiderivative = CubicHermiteSpline(tk, qk, vk, axis=0).antiderivative()
            if self._frozen:
                self._antiderivative = antiderivative
        return np.where((t > 0.0)[..., None], antiderivative(np.clip(t, 0.0, None)), 0.0)

    # -- construction helpers ----------------------------------------------

    @classmethod
    def from_function(cls, step: float, horizon: float, q_fn: Callable, v_fn: Callable,
                      a_fn: Callable, quiescent_past: bool = False) -> "TrajectoryHistory":
        """Sample an analytic trajectory on [0, horizon]; returns a frozen snapshot."""
        n = int(round(horizon / step))
        times = np.arange(n + 1) * step
        q = np.array([q_fn(t) for t in times], dtype=float).reshape(n + 1, 3)
        v = np.array([v_fn(t) for t in times], dtype=float).reshape(n + 1, 3)
        a = np.array([a_fn(t) for t in times], dtype=float).reshape(n + 1, 3)
        history = cls(step, q[0], v[0], a[0], quiescent_past=quiescent_past, capacity=n + 1)
        for i in range(1, n + 1):
            history.append(q[i], v[i], a[i])
        return history.snapshot()

    def to_frame(self) -> pd.DataFrame:
        """Knot table with columns t, q1..3, v1..3, a1..3."""
        data = np.hstack([self.times[:, None], self.positions, self.velocities, self.accelerations])
        return pd.DataFrame(data, columns=KNOT_COLUMNS)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, quiescent_past: bool = False) -> "TrajectoryHistory":
        """Rebuild a frozen history; the time column must be uniformly spaced from 0."""
        missing = set(KNOT_COLUMNS) - set(df.columns)
        if missing:
            raise ValueError(f"knot table lacks columns {sorted(missing)}")
        data = df[KNOT_COLUMNS].to_numpy(dtype=float)
        if len(data) < 2 or not np.all(np.isfinite(data)):
            raise ValueError("knot table needs at least two finite rows")
        t = data[:, 0]
        step = t[1] - t[0]
        if abs(t[0]) > 1e-12 or step <= 0.0 or np.max(np.abs(t - np.arange(len(t)) * step)) > 1e-9 * max(1.0, t[-1]):
            raise ValueError("knot times must be uniformly spaced from t = 0")
        history = cls(step, data[0, 1:4], data[0, 4:7], data[0, 7:10],
                      quiescent_past=quiescent_past, capacity=len(data))
        for row in data[1:]:
            history.append(row[1:4], row[4:7], row[7:10])
        logger.debug(f"Rebuilt history with {len(data)} knots, h={step}")
        return history.snapshot()
