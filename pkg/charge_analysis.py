"""
Fourier-side analysis of the coupling density: radial transform, axial
marginal and the Wiener condition scan.
"""
from typing import Optional

import numpy as np
from loguru import logger
from scipy import integrate, optimize

from config import settings
from models import ChargeDensity, DiagnosticError, WienerReport

REFINED_MINIMA = 32


class ChargeAnalysisEngine:
    """Transforms of radial densities and the Wiener gate."""

    def __init__(self):
        self.cross_check_tol = settings.wiener_cross_check_tol
        self.threshold_fraction = settings.wiener_threshold_fraction

    def fourier_radial(self, density: ChargeDensity, k):
        """rho^(k) = (4 pi / k) int_0^R r sin(kr) rho(r) dr, and Q at k = 0."""
        k_arr = np.atleast_1d(np.asarray(k, dtype=float))
        if np.any(k_arr < 0.0):
            raise ValueError("fourier_radial needs k >= 0")
        values = np.array([self._fourier_one(density, kk) for kk in k_arr])
        return values if np.ndim(k) else float(values[0])

    def _fourier_one(self, density: ChargeDensity, k: float) -> float:
        if k == 0.0:
            return density.total_charge
        if density.is_zero:
            return 0.0
        value, _ = integrate.quad(
            lambda r: r * float(density.profile(np.array([r]))[0]),
            0.0, density.support_radius, weight="sin", wvar=k, limit=400, epsabs=1e-14,
        )
        return 4.0 * np.pi * value / k

    def axial_marginal(self, density: ChargeDensity, s):
        """rho_a(s) = 2 pi int_|s|^R r rho(r) dr, zero for |s| >= R."""
        a = np.abs(np.asarray(s, dtype=float))
        R = density.support_radius
        value = np.where(a < R, 2.0 * np.pi * (density.moment_total - density.tables.moment(a)), 0.0)
        return value if np.ndim(s) else float(value)

    def axial_marginal_derivative(self, density: ChargeDensity, s):
        """rho_a'(s) = -2 pi s rho(|s|)."""
        s = np.asarray(s, dtype=float)
        return -2.0 * np.pi * s * density.profile(np.abs(s))

    def marginal_fourier(self, density: ChargeDensity, k: float) -> float:
        """1D cosine transform of the axial marginal."""
        value, _ = integrate.quad(
            lambda s: self.axial_marginal(density, s),
            0.0, density.support_radius, weight="cos", wvar=k, limit=400, epsabs=1e-14,
        )
        return 2.0 * value

    def wiener_scan(self, density: ChargeDensity, k_max: Optional[float] = None,
                    samples: Optional[int] = None, threshold: Optional[float] = None) -> WienerReport:
        """
        Scan |rho^| on [0, k_max] and refine every bracketed local minimum.

        Also checks rho^(k) against the transform of the axial marginal at 16
        wavenumbers; a mismatch means a broken transform, not a physics fact.
        """
        R = density.support_radius
        k_max = settings.wiener_kmax_factor * 2.0 * np.pi / R if k_max is None else k_max
        samples = settings.wiener_samples if samples is None else samples
        threshold = self.threshold_fraction * abs(density.total_charge) if threshold is None else threshold
        if not k_max > 0.0:
            raise ValueError("wiener_scan needs k_max > 0")
        if samples < 2:
            raise ValueError("wiener_scan needs at least 2 samples")

        if density.is_zero:
            return WienerReport(k_max, samples, 0.0, 0.0, threshold)

        grid = np.linspace(0.0, k_max, samples)
        magnitude = np.abs(self.fourier_radial(density, grid))
        best = int(np.argmin(magnitude))
        candidates = [(float(magnitude[best]), float(grid[best]))]

        interior = np.flatnonzero((magnitude[1:-1] <= magnitude[:-2]) & (magnitude[1:-1] <= magnitude[2:])) + 1
        # every grid minimum that is already a zero, plus the deepest of the rest
        near_zero = interior[magnitude[interior] < threshold]
        deepest = interior[np.argsort(magnitude[interior])][:REFINED_MINIMA]
        interior = np.union1d(near_zero, deepest)
        for i in interior:
            bracket = (grid[i - 1], grid[i], grid[i + 1])
            try:
                result = optimize.minimize_scalar(
                    lambda kk: abs(self._fourier_one(density, kk)), bracket=bracket,
                    method="golden", tol=1e-10,
                )
            except ValueError:
                candidates.append((float(magnitude[i]), float(grid[i])))
                continue
            if bracket[0] <= result.x <= bracket[2]:
                candidates.append((float(result.fun), float(result.x)))

        # exact zeros differ only by quadrature noise: the first one below threshold is reported
        min_abs = min(v for v, _ in candidates)
        zeros = [k for v, k in candidates if v < threshold]
        argmin = min(zeros) if zeros else min(k for v, k in candidates if v == min_abs)

        tail = magnitude[grid >= 0.9 * k_max]
        tail_envelope = float(tail.max()) if len(tail) else float(magnitude[-1])

        cross_error = self._cross_check(density, k_max)
        report = WienerReport(k_max, samples, min_abs, argmin, threshold, tail_envelope, cross_error)
        logger.info(f"Wiener scan '{density.name}': min |rho^| = {min_abs:.3e} at k = {argmin:.6f} "
                    f"-> {report.verdict.value}")
        return report

    def _cross_check(self, density: ChargeDensity, k_max: float) -> float:
        ks = np.linspace(0.5, k_max, 16)
        error = max(abs(self._fourier_one(density, k) - self.marginal_fourier(density, k)) for k in ks)
        tolerance = self.cross_check_tol * max(1.0, abs(density.total_charge))
        if error > tolerance:
            logger.error(f"Marginal transform identity violated: {error:.3e} > {tolerance:.1e}")
            raise DiagnosticError(
                f"transform of the axial marginal disagrees with rho^ by {error:.3e}; "
                f"quadrature or table bug for density '{density.name}'"
            )
        return float(error)


# Global instance
charge_analysis_engine = ChargeAnalysisEngine()
