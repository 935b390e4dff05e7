"""
Diagnostics engine: energies, fluxes, radiation, convolution identity,
relaxation and decay fits, weighted norms and the scattering remainder.

Every diagnostic is a pure consumer of a completed SimulationRecord; whole-space
and infinite-time integrals are truncated and the truncation is reported in
the result's metadata.
"""
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import integrate, optimize, stats

from charge_analysis import ChargeAnalysisEngine, charge_analysis_engine
from config import settings
from core_model import coulomb_field, coulomb_gradient
from field_data import stationary_deviation
from field_engine import FieldEngine, theta_threshold
from models import (ChargeDensity, ConeViolationError, ConvolutionCheck, DecayFit, DecayFlag,
                    DiagnosticError, DiagnosticSeries, FieldSample, FluxBalance, RelaxationSummary,
                    SimulationRecord, WeightedNorm)
from quadrature import ball_rule, composite_gauss, gauss_legendre, panel_ball_rule, panel_edges, sphere_rule
from trajectory import TrajectoryHistory
from utils import normalize_directions

FOUR_PI = 4.0 * np.pi


def remainder_norm(density: ChargeDensity, q_plus, q) -> float:
    """||rho(. - q+) - rho(. - q)||_L2 by ball quadrature around q+."""
    q_plus = np.asarray(q_plus, dtype=float)
    delta = float(np.linalg.norm(np.asarray(q, dtype=float) - q_plus))
    if density.is_zero or delta == 0.0:
        return 0.0
    nodes, weights = ball_rule(density.support_radius + delta, density.quadrature_order, q_plus)
    diff = density.density(nodes - q_plus) - density.density(nodes - q)
    return float(np.sqrt(np.sum(weights * diff ** 2)))


class DiagnosticsEngine:
    """Quantitative diagnostics of completed runs."""

    def __init__(self, field_engine: Optional[FieldEngine] = None,
                 analysis: Optional[ChargeAnalysisEngine] = None,
                 sphere_order: Optional[Tuple[int, int]] = None):
        self.field_engine = field_engine or FieldEngine()
        self.analysis = analysis or charge_analysis_engine
        self.sphere_order = tuple(sphere_order or settings.audit_sphere_order)

    def _fields(self, run: SimulationRecord, x, t: float) -> FieldSample:
        s = run.scenario
        return self.field_engine.field_eval(s.density, run.history, s.field_data, x, t)

    def _ball(self, run: SimulationRecord, radius: float, breaks: Sequence[float] = (),
              inner: float = 0.0, width: Optional[float] = None):
        R_rho = run.scenario.density.support_radius
        width = width or settings.energy_panel_width * R_rho
        return panel_ball_rule(radius, width, settings.energy_panel_order, self.sphere_order,
                               breaks=[b for b in breaks if b > 0.0], inner=inner)

    # -- energies and fluxes ----------------------------------------------------------

    def local_energy(self, run: SimulationRecord, R: float, t: float) -> float:
        """
        H_R(t) = (1/2) int_{B_R} (pi^2 + |grad phi|^2) + p^2 / 2 + V(q) + int phi rho(x - q).
        """
        density = run.scenario.density
        reach = run.history.max_radius() + density.support_radius
        if t < 0.0:
            raise ValueError(f"local_energy needs t >= 0, got {t}")
        if R <= reach:
            raise ValueError(f"R={R} must exceed q0-bar + R_rho = {reach:.6g}")

        q, p, _ = run.history.interpolate(t)
        radius = float(np.linalg.norm(q))
        nodes, weights = self._ball(run, R, [radius - density.support_radius, radius + density.support_radius])
        sample = self._fields(run, nodes, t)
        field = 0.5 * np.sum(weights * (sample.pi ** 2 + np.sum(sample.grad_phi ** 2, axis=1)))
        particle = 0.5 * float(p @ p) + float(run.scenario.potential.value(q))

        interaction = 0.0
        if not density.is_zero:
            inner, w_inner = ball_rule(density.support_radius, density.quadrature_order, q)
            interaction = float(np.sum(w_inner * self._fields(run, inner, t).phi * density.density(inner - q)))
        return float(field + particle + interaction)

    def flux_balance(self, run: SimulationRecord, R: float, T0: float, T: float) -> FluxBalance:
        """
        Energy audit on [R + T0, R + T]: the drop of H_R against the outgoing flux
        -int dt int_{S_R} omega . pi grad phi, split into retarded/Kirchhoff cross terms.
        """
        if T0 < 0.0 or T <= T0:
            raise ValueError(f"flux_balance needs 0 <= T0 < T, got T0={T0}, T={T}")
        t_start, t_end = R + T0, R + T
        delta = self.local_energy(run, R, t_start) - self.local_energy(run, R, t_end)

        R_rho = run.scenario.density.support_radius
        times, w_t = composite_gauss(panel_edges(t_start, t_end, settings.flux_panel_width * R_rho),
                                     settings.flux_panel_order)
        dirs, w_dir = sphere_rule(*self.sphere_order)
        x = R * dirs
        area = R ** 2 * w_dir
        parts = {"rr": 0.0, "rK": 0.0, "Kr": 0.0, "KK": 0.0}
        for s, w in zip(times, w_t):
            sample = self._fields(run, x, s)
            r, K = sample.retarded, sample.kirchhoff
            for key, pi, grad in (("rr", r.pi, r.grad_phi), ("rK", r.pi, K.grad_phi),
                                  ("Kr", K.pi, r.grad_phi), ("KK", K.pi, K.grad_phi)):
                parts[key] -= w * float(np.sum(area * pi * np.einsum("ki,ki->k", dirs, grad)))

        balance = FluxBalance(R, t_start, t_end, delta, sum(parts.values()), parts)
        logger.info(f"Flux balance R={R} on [{t_start:.4g}, {t_end:.4g}]: dH={delta:.6e}, "
                    f"flux={balance.flux_integral:.6e}, mismatch={balance.mismatch:.3e}")
        return balance

    # -- radiation ----------------------------------------------------------------------

    def radiation_functional(self, run: SimulationRecord, T: float,
                             omega_grid: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                             t_start: Optional[float] = None, method: str = "axial") -> DiagnosticSeries:
        """
        Cumulative int_{t_start}^t ds int_{S^2} |pi-bar(omega, s)|^2 domega.

        t_start defaults to the first time whose retarded times are all
        recorded (0 with a quiescent past).
        """
        density, history = run.scenario.density, run.history
        dirs, w_dir = omega_grid if omega_grid is not None else sphere_rule(*settings.radiation_sphere_order)
        dirs = normalize_directions(dirs)
        R_rho = density.support_radius
        if t_start is None:
            t_start = self.field_engine.amplitude_window(density, history, dirs)[0]
        if T <= t_start:
            raise ValueError(f"radiation window needs T > {t_start:.6g}, got {T}")

        edges = panel_edges(t_start, T, settings.radiation_time_width * R_rho)
        nodes, weights = gauss_legendre(settings.radiation_time_order, edges[:-1], edges[1:])
        if method == "axial":
            amp = self.field_engine.farfield_amplitude_axial(density, history, dirs, nodes.ravel())
        elif method == "ball":
            amp = np.stack([self.field_engine.farfield_amplitude(density, history, dirs, s)
                            for s in nodes.ravel()], axis=1)
        else:
            raise ValueError(f"unknown far-field method '{method}'")

        power = (w_dir @ np.asarray(amp) ** 2).reshape(nodes.shape)
        cumulative = np.concatenate([[0.0], np.cumsum(np.sum(weights * power, axis=1))])
        logger.info(f"Radiated energy on [{t_start:.4g}, {T:.4g}]: {cumulative[-1]:.6e}")
        return DiagnosticSeries("radiation", edges, cumulative, {
            "t_start": t_start,
            "directions": len(dirs),
            "method": method,
            "time_panel_width": settings.radiation_time_width * R_rho,
            "time_order": settings.radiation_time_order,
        })

    # -- convolution representation -----------------------------------------------------------

    def _cone_theta(self, history: TrajectoryHistory, omega: np.ndarray) -> float:
        if history.speed_bound < 1.0:
            return 0.0
        return self.field_engine.check_cone(history, omega[None, :], settings.cone_eps, settings.plane_tolerance)

    def _retarded_time(self, history: TrajectoryHistory, omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Solve tau - omega . q(tau) = theta: vectorised Newton, bracketed fallback per entry."""
        hi = history.last_time
        q0 = history.interpolate(0.0)[0]
        lo = min(0.0, float(np.min(theta)) + float(omega @ q0) - 1.0) if history.quiescent_past else 0.0

        def clipped(tau):
            return np.clip(tau, lo, hi)

        def residual(tau):
            return clipped(tau) - history.interpolate(clipped(tau))[0] @ omega - theta

        def slope(tau):
            return 1.0 - history.interpolate(clipped(tau))[1] @ omega

        start = clipped(theta + history.interpolate(np.clip(theta, lo, hi))[0] @ omega)
        if theta.size > 1:
            tau, converged, _ = optimize.newton(residual, start, fprime=slope, tol=1e-13, maxiter=50,
                                                full_output=True, disp=False)
            tau = np.asarray(tau, dtype=float).copy()
            converged = np.asarray(converged) & (tau >= lo) & (tau <= hi)
            converged &= np.abs(residual(tau)) < 1e-10
        else:
            tau, converged = np.asarray(start, dtype=float).copy(), np.zeros(theta.shape, dtype=bool)
        for i in np.flatnonzero(~converged):
            def scalar(s, target=theta.flat[i]):
                return s - float(history.interpolate(s)[0] @ omega) - target
            if scalar(lo) > 0.0 or scalar(hi) < 0.0:
                raise ValueError(f"theta={theta.flat[i]:.6g} outside the image of tau - omega.q(tau)")
            tau[i] = optimize.brentq(scalar, lo, hi, xtol=1e-14)
        return tau.reshape(theta.shape)

    def g_omega(self, run: SimulationRecord, omega, theta):
        """g(theta) = r''(tau) / (1 - r'(tau))^3 with r = omega . q and tau - r(tau) = theta."""
        history = run.history
        omega = normalize_directions(np.asarray(omega, dtype=float).reshape(3))
        self._cone_theta(history, omega)
        theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
        tau = self._retarded_time(history, omega, theta_arr)
        _, v, a = history.interpolate(tau)
        gap = 1.0 - v @ omega
        if np.any(gap <= 0.0):
            raise ConeViolationError(f"1 - omega.v reached {gap.min():.3e}")
        value = (a @ omega) / gap ** 3
        return value if np.ndim(theta) else float(value[0])

    def convolution_check(self, run: SimulationRecord, omega, t: float) -> ConvolutionCheck:
        """
        lhs = -(1/4 pi)(rho_a * g_omega)(t) against rhs = pi-bar(omega, t).

        The -1/4 pi prefactor matches the sign convention of farfield_amplitude
        (time derivative of the retarded potential). The bare form pi-bar = rho_a * g_omega,
        without the factor, is off by exactly -1/4 pi against that amplitude.
        """
        density = run.scenario.density
        omega = normalize_directions(np.asarray(omega, dtype=float).reshape(3))
        rhs = self.field_engine.farfield_amplitude(density, run.history, omega, t)
        if density.is_zero:
            return ConvolutionCheck(t, 0.0, rhs)
        R_rho = density.support_radius
        theta, w = gauss_legendre(self.field_engine.axial_order, t - R_rho, t + R_rho)
        g = self.g_omega(run, omega, theta)
        lhs = -float(np.sum(w * self.analysis.axial_marginal(density, t - theta) * g)) / FOUR_PI
        logger.debug(f"Convolution check t={t}: lhs={lhs:.6e}, rhs={rhs:.6e}")
        return ConvolutionCheck(t, lhs, rhs)

    # -- relaxation and rates ----------------------------------------------------------

    def relaxation_series(self, run: SimulationRecord, window: Optional[float] = None):
        """(|q'(t)|, |q''(t)|) knot series plus the early/late envelope summary."""
        history = run.history
        window = settings.relaxation_window if window is None else window
        times = history.times
        speed = np.linalg.norm(history.velocities, axis=1)
        accel = np.linalg.norm(history.accelerations, axis=1)
        k = max(1, int(window * len(times)))

        try:
            theta = theta_threshold(history.speed_bound, settings.cone_eps)
        except ValueError:
            logger.warning(f"Theta cone is empty at speed bound {history.speed_bound:.4g}")
            theta = 1.0
        summary = RelaxationSummary(
            peak_speed=float(speed.max()),
            early_envelope=float(speed[:k].max()),
            late_envelope=float(speed[-k:].max()),
            peak_acceleration=float(accel.max()),
            late_acceleration=float(accel[-k:].max()),
            theta=theta,
        )
        meta = {"window": window, "theta": theta, "h": history.step}
        return (DiagnosticSeries("speed", times, speed, dict(meta)),
                DiagnosticSeries("acceleration", times, accel, dict(meta)),
                summary)

    def decay_fit(self, series: DiagnosticSeries, t_min: float, t_max: float,
                  alpha_target: float = 1.5, eps_tol: Optional[float] = None) -> DecayFit:
        """
        Least-squares slope of log|value| against log t on [t_min, t_max].

        The fitted beta is only compared one-sidedly: flag is upper-bound-consistent
        iff beta >= alpha_target - eps_tol.
        """
        eps_tol = settings.decay_eps if eps_tol is None else eps_tol
        if not 0.0 <= t_min < t_max:
            raise ValueError(f"decay window needs 0 <= t_min < t_max, got [{t_min}, {t_max}]")
        values = series.values
        if values.ndim > 1:
            values = np.linalg.norm(values.reshape(len(values), -1), axis=1)
        values = np.abs(values)
        window = (series.times >= t_min) & (series.times <= t_max) & (series.times > 0.0)
        usable = window & (values > settings.decay_floor)
        excluded = int(window.sum() - usable.sum())
        if usable.sum() < settings.decay_min_points:
            raise DiagnosticError(f"series '{series.name}': {int(usable.sum())} usable points on "
                                  f"[{t_min}, {t_max}], need {settings.decay_min_points}")
        if excluded:
            logger.info(f"Decay fit of '{series.name}': {excluded} values below {settings.decay_floor:g} excluded")

        log_t, log_v = np.log(series.times[usable]), np.log(values[usable])
        fit = stats.linregress(log_t, log_v)
        residual = float(np.sqrt(np.mean((log_v - fit.intercept - fit.slope * log_t) ** 2)))
        beta = -float(fit.slope)
        flag = DecayFlag.UPPER_BOUND_CONSISTENT if beta >= alpha_target - eps_tol else DecayFlag.INCONCLUSIVE
        return DecayFit(t_min, t_max, beta, residual, flag, alpha_target, eps_tol, int(usable.sum()),
                        excluded, float(np.exp(fit.intercept)))

    def majorant(self, series: DiagnosticSeries, alpha: float, eps: float) -> DiagnosticSeries:
        """m(t) = sup_{s <= t} (1 + s)^(alpha - eps) |value(s)|."""
        values = np.abs(series.values)
        if values.ndim > 1:
            values = np.linalg.norm(values.reshape(len(values), -1), axis=1)
        scaled = (1.0 + series.times) ** (alpha - eps) * values
        return DiagnosticSeries(f"majorant({series.name})", series.times, np.maximum.accumulate(scaled),
                                {**series.metadata, "alpha": alpha, "eps": eps})

    # -- norms -------------------------------------------------------------------------

    def _deviation_tail(self, run: SimulationRecord, alpha: float, t: float, R_trunc: float) -> float:
        """
        Weighted deviation beyond R_trunc: measured on [R_trunc, 2 R_trunc],
        extrapolated with the decay class of phi0 - s_q+.
        """
        s = run.scenario
        width = max(settings.energy_panel_width * s.density.support_radius, 0.1 * R_trunc)
        nodes, weights = self._ball(run, 2.0 * R_trunc, inner=R_trunc, width=width)
        sample = self._fields(run, nodes, t)
        dev = sample.grad_phi - coulomb_gradient(s.density, s.q_plus, nodes)
        weight = (1.0 + np.linalg.norm(nodes, axis=1)) ** (-2.0 * alpha)
        shell = float(np.sum(weights * weight * (np.sum(dev ** 2, axis=1) + sample.pi ** 2)))

        decay = stationary_deviation(s.field_data, s.density, s.q_plus).decay_class
        if decay.kind in ("zero", "compact"):
            return float(np.sqrt(shell))
        power = 2.0 * alpha + 2.0 * decay.sigma - 2.0
        if power <= 1.0:
            logger.warning(f"Weighted tail diverges for alpha={alpha}, sigma={decay.sigma}")
            return float("inf")
        ratio = 2.0 ** (1.0 - power)
        return float(np.sqrt(shell * (1.0 + ratio / (1.0 - ratio))))

    def weighted_deviation_norm(self, run: SimulationRecord, alpha: float, t: float,
                                R_trunc: float) -> WeightedNorm:
        """
        ||(1+|x|)^-alpha grad(phi - s_q+)|| + ||(1+|x|)^-alpha pi|| + |q - q+| + |p|
        on the ball of radius R_trunc.
        """
        s = run.scenario
        R_rho = s.density.support_radius
        if alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        reach = run.history.max_radius() + R_rho
        if R_trunc < 2.0 * reach:
            raise ValueError(f"R_trunc={R_trunc} must be at least 2 (q0-bar + R_rho) = {2.0 * reach:.6g}")

        q, p, _ = run.history.interpolate(t)
        radius, centre = float(np.linalg.norm(q)), float(np.linalg.norm(s.q_plus))
        breaks = [R_rho, radius - R_rho, radius + R_rho, centre - R_rho, centre + R_rho]
        nodes, weights = self._ball(run, R_trunc, breaks)
        sample = self._fields(run, nodes, t)
        weight = (1.0 + np.linalg.norm(nodes, axis=1)) ** (-2.0 * alpha)
        dev = sample.grad_phi - coulomb_gradient(s.density, s.q_plus, nodes)

        field_part = float(np.sqrt(np.sum(weights * weight * np.sum(dev ** 2, axis=1))))
        momentum_part = float(np.sqrt(np.sum(weights * weight * sample.pi ** 2)))
        particle_part = float(np.linalg.norm(q - s.q_plus) + np.linalg.norm(p))
        tail = self._deviation_tail(run, alpha, t, R_trunc)
        return WeightedNorm(field_part + momentum_part + particle_part, field_part, momentum_part,
                            particle_part, tail, R_trunc)

    def weighted_norm_series(self, run: SimulationRecord, alpha: float, times: Sequence[float],
                             R_trunc: float) -> DiagnosticSeries:
        norms = [self.weighted_deviation_norm(run, alpha, t, R_trunc) for t in times]
        return DiagnosticSeries("weighted_deviation", times, [n.value for n in norms], {
            "alpha": alpha,
            "truncation_radius": R_trunc,
            "tail_bound": [n.tail_bound for n in norms],
            "sphere_order": list(self.sphere_order),
        })

    def attraction_seminorm(self, run: SimulationRecord, R: float, t: float) -> float:
        """||phi - s_q(t)||_H1(B_R) + ||pi||_L2(B_R) + |p|."""
        s = run.scenario
        q, p, _ = run.history.interpolate(t)
        radius = float(np.linalg.norm(q))
        R_rho = s.density.support_radius
        nodes, weights = self._ball(run, R, [radius - R_rho, radius + R_rho])
        sample = self._fields(run, nodes, t)
        dev = sample.phi - coulomb_field(s.density, q, nodes)
        dev_grad = sample.grad_phi - coulomb_gradient(s.density, q, nodes)
        h1 = np.sqrt(np.sum(weights * (dev ** 2 + np.sum(dev_grad ** 2, axis=1))))
        l2 = np.sqrt(np.sum(weights * sample.pi ** 2))
        return float(h1 + l2 + np.linalg.norm(p))

    # -- scattering ----------------------------------------------------------------------

    def scattering_remainder(self, run: SimulationRecord, alpha: float,
                             t: float = 0.0) -> Tuple[DiagnosticSeries, DiagnosticSeries]:
        """
        Source norm ||rho(. - q+) - rho(. - q(s))|| per sampled knot and the bound
        ||r1(t)|| <= int_t^T ||R(s)|| ds + extrapolated tail beyond T.
        """
        s, history = run.scenario, run.history
        _, _, summary = self.relaxation_series(run)
        if summary.late_envelope > settings.relaxation_floor and summary.envelope_ratio >= settings.scatter_ratio:
            raise DiagnosticError(f"run has not relaxed toward q+: envelope ratio {summary.envelope_ratio:.3f} "
                                  f">= {settings.scatter_ratio}")

        stride = max(1, int(np.ceil(len(history) / settings.scatter_samples)))
        index = np.unique(np.append(np.arange(0, len(history), stride), len(history) - 1))
        times = history.times[index]
        positions = history.positions[index]
        norms = np.array([remainder_norm(s.density, s.q_plus, q) for q in positions])
        norm_series = DiagnosticSeries("source_remainder", times, norms, {"stride": stride})

        cumulative = integrate.cumulative_trapezoid(norms, times, initial=0.0)
        T = float(times[-1])
        tail, fit = 0.0, None
        try:
            fit = self.decay_fit(norm_series, 0.5 * T, T, alpha_target=alpha - 1.0)
        except DiagnosticError as e:
            logger.info(f"No tail extrapolation: {e}")
        if fit is not None:
            if fit.beta > 1.0:
                tail = fit.amplitude * T ** (1.0 - fit.beta) / (fit.beta - 1.0)
            else:
                logger.warning(f"Source remainder decays like t^-{fit.beta:.3f}; tail beyond T={T} not bounded")

        keep = times >= t
        bound = cumulative[-1] - cumulative[keep] + tail
        meta: Dict = {"alpha": alpha, "tail": tail, "horizon": T}
        if fit is not None:
            meta.update({"remainder_beta": fit.beta, "remainder_flag": fit.flag.value})
        return norm_series, DiagnosticSeries("r1_bound", times[keep], bound, meta)

    # -- wave zone -----------------------------------------------------------------------

    def wave_zone_residuals(self, run: SimulationRecord, omega, t_hat: float,
                            radii: Sequence[float]) -> pd.DataFrame:
        """|R pi_r(R omega, R + t_hat) - pi-bar| and |R grad phi_r + omega pi-bar| per radius."""
        density, history = run.scenario.density, run.history
        omega = normalize_directions(np.asarray(omega, dtype=float).reshape(3))
        amplitude = self.field_engine.farfield_amplitude(density, history, omega, t_hat)
        rows = []
        for R in radii:
            _, pi, grad = self.field_engine.lw_field(density, history, R * omega[None, :], R + t_hat)
            rows.append({
                "radius": float(R),
                "amplitude": amplitude,
                "pi_residual": abs(R * pi[0] - amplitude),
                "grad_residual": float(np.linalg.norm(R * grad[0] + omega * amplitude)),
            })
        return pd.DataFrame(rows)


# Global instance
diagnostics_engine = DiagnosticsEngine()
