"""
Field engine: exact decomposition phi = phi_r + phi_K of the wave field.

phi_r is the retarded potential of the moving charge, evaluated by Gauss
quadrature in spherical coordinates centred at the observation point and
restricted to the spherical caps that meet the support ball. phi_K is the
free evolution of the initial data (Kirchhoff spherical means, or the exact
radial d'Alembert form for the catalog's radial components).
"""
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from config import settings
from models import (ChargeDensity, ConeViolationError, FieldInitialData, FieldPart, FieldSample,
                    RadialComponent)
from quadrature import (cap_rule, composite_gauss, gauss_legendre, orthonormal_frame, panel_edges, sphere_rule,
                        split_gauss)
from trajectory import TrajectoryHistory
from utils import normalize_directions

FOUR_PI = 4.0 * np.pi


def theta_threshold(speed_bound: float, eps: float) -> float:
    """
    Opening Theta of the cone |omega^3| >= Theta on which |omega . v| < 1.

    Zero for subluminal records, eps + sqrt(1 - 1/speed_bound^2) otherwise.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if speed_bound < 1.0:
        return 0.0
    root = np.sqrt(1.0 - speed_bound ** -2)
    if eps >= 1.0 - root:
        raise ValueError(f"eps={eps} must be below 1 - sqrt(1 - speed_bound^-2) = {1.0 - root:.6g}")
    return float(eps + root)


class RetardedSource(ABC):
    """Source S(y, tau) of psi_tt - Laplacian psi = S, supported in a fixed ball."""

    center: np.ndarray
    radius: float

    @abstractmethod
    def terms(self, y: np.ndarray, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """S, grad_y S and dS/dtau at points y (..., 3) and times tau (...)."""

    @abstractmethod
    def initial(self, y: np.ndarray) -> np.ndarray:
        """S(y, 0)."""


class MovingChargeSource(RetardedSource):
    """S(y, tau) = -rho(y - q(tau)) for the recorded trajectory."""

    def __init__(self, density: ChargeDensity, history: TrajectoryHistory):
        self.density = density
        self.history = history
        center, spread = history.bounding_ball()
        self.center = center
        self.radius = spread + density.support_radius

    def terms(self, y, tau):
        q, v, _ = self.history.interpolate(tau)
        rel = y - q
        grad = self.density.gradient(rel)
        return -self.density.density(rel), -grad, np.einsum("...i,...i->...", grad, v)

    def initial(self, y):
        q0 = self.history.interpolate(0.0)[0]
        return -self.density.density(y - q0)


class FieldEngine:
    """Evaluates retarded, free and far fields for a trajectory record."""

    def __init__(self, ball_order: Optional[Tuple[int, int, int]] = None,
                 sphere_order: Optional[Tuple[int, int]] = None,
                 chunk_size: Optional[int] = None):
        self.ball_order = tuple(ball_order or settings.ball_order)
        self.sphere_order = tuple(sphere_order or settings.sphere_order)
        self.chunk_size = chunk_size or settings.field_chunk_size
        self.axial_order = settings.axial_order
        self.radial_panels = settings.radial_panels
        self.slice_order = settings.slice_order
        self.slice_width = settings.slice_width
        self.disk_order = tuple(settings.disk_order)

    @staticmethod
    def interpolate(history: TrajectoryHistory, t):
        return history.interpolate(t)

    # -- retarded part --------------------------------------------------------

    def retarded_integral(self, source: RetardedSource, x, t: float) -> FieldPart:
        """
        psi(x, t) = (1/4 pi) int_{|z|<t} S(x + z, t - |z|) / |z| dz with its
        gradient and time derivative (including the light-sphere term).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(x)
        phi, pi, grad = np.zeros(n), np.zeros(n), np.zeros((n, 3))
        if t <= 0.0:
            return FieldPart(phi, pi, grad)

        c, T = source.center, source.radius
        D = np.linalg.norm(x - c, axis=1)
        r_lo = np.maximum(0.0, D - T)
        r_hi = np.minimum(t, D + T)
        # inside the ball the sphere |z| = r starts to leave it at r = T - D; outside, halve the range
        kink = np.clip(np.where(D < T, T - D, 0.5 * (r_lo + r_hi)), r_lo, r_hi)
        active = np.flatnonzero(r_hi > r_lo)
        n_r, n_mu, n_phi = self.ball_order
        chunk = max(1, self.chunk_size // (2 * self.radial_panels))

        for start in range(0, len(active), chunk):
            idx = active[start:start + chunk]
            xs, Ds = x[idx], D[idx]
            axis, centred = self._axes(xs, c, Ds)

            edges = np.stack([r_lo[idx], kink[idx], r_hi[idx]], axis=1)
            r, w_r = split_gauss(n_r, edges, self.radial_panels)
            mu_min = self._cap_cosine(Ds, r, T, centred)
            dirs, w_dir = cap_rule(axis, mu_min, n_mu, n_phi)
            y = xs[:, None, None, :] + r[..., None, None] * dirs
            tau = np.broadcast_to((t - r)[..., None], w_dir.shape)
            S, gS, dS = source.terms(y, tau)
            weight = (w_r * r)[..., None] * w_dir / FOUR_PI
            phi[idx] = np.sum(weight * S, axis=(1, 2))
            grad[idx] = np.einsum("nrk,nrki->ni", weight, gS)
            pi[idx] = np.sum(weight * dS, axis=(1, 2))

            # light sphere |z| = t inside the support: boundary term of d/dt
            edge = r_hi[idx] >= t
            if np.any(edge):
                e = np.flatnonzero(edge)
                t_arr = np.full((len(e), 1), t)
                mu_t = self._cap_cosine(Ds[e], t_arr, T, centred[e])
                d_t, w_t = cap_rule(axis[e], mu_t, self.sphere_order[0], self.sphere_order[1])
                S0 = source.initial(xs[e, None, None, :] + t * d_t)
                pi[idx[e]] += t * np.sum(w_t * S0, axis=(1, 2)) / FOUR_PI
        return FieldPart(phi, pi, grad)

    @staticmethod
    def _axes(xs: np.ndarray, c: np.ndarray, Ds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        centred = Ds < 1e-12
        axis = np.where(centred[:, None], np.array([0.0, 0.0, 1.0]),
                        (c - xs) / np.where(centred, 1.0, Ds)[:, None])
        return axis, centred

    @staticmethod
    def _cap_cosine(Ds: np.ndarray, r: np.ndarray, T: float, centred: np.ndarray) -> np.ndarray:
        """Smallest cos(angle to the centre direction) of directions whose sphere point lies in the ball."""
        Dc = Ds[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = (Dc ** 2 + r ** 2 - T ** 2) / (2.0 * r * np.where(centred[:, None], 1.0, Dc))
        mu = np.where(centred[:, None] | (r <= 0.0), -1.0, mu)
        return np.clip(mu, -1.0, 1.0)

    def lw_field(self, density: ChargeDensity, history: TrajectoryHistory, x, t: float):
        """(phi_r, pi_r, grad phi_r) of the retarded potential of the moving charge."""
        if density.is_zero:
            x = np.atleast_2d(x)
            return np.zeros(len(x)), np.zeros(len(x)), np.zeros((len(x), 3))
        part = self.retarded_integral(MovingChargeSource(density, history), x, t)
        return part.phi, part.pi, part.grad_phi

    # -- free part -------------------------------------------------------------

    def kirchhoff_field(self, data: FieldInitialData, x, t: float):
        """(phi_K, pi_K, grad phi_K) by spherical-mean quadrature of the Kirchhoff formula."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if t < 0.0:
            raise ValueError("kirchhoff_field needs t >= 0")
        if t == 0.0 or data.is_zero:
            return data.phi0(x), data.pi0(x), data.grad_phi0(x)

        z, w = sphere_rule(*self.sphere_order)
        w = w / FOUR_PI
        phi, pi, grad = np.zeros(len(x)), np.zeros(len(x)), np.zeros((len(x), 3))
        for start in range(0, len(x), self.chunk_size):
            sl = slice(start, start + self.chunk_size)
            p = x[sl, None, :] + t * z[None, :, :]
            f, g = data.phi0(p), data.pi0(p)
            df, dg = data.grad_phi0(p), data.grad_pi0(p)
            hz = np.einsum("nkij,kj->nki", data.hess_phi0(p), z)
            df_z = np.einsum("nki,ki->nk", df, z)
            dg_z = np.einsum("nki,ki->nk", dg, z)
            z_h_z = np.einsum("nki,ki->nk", hz, z)
            phi[sl] = (w * (t * g + f + t * df_z)).sum(axis=1)
            grad[sl] = np.einsum("k,nki->ni", w, t * dg + df + t * hz)
            pi[sl] = (w * (g + t * dg_z + 2.0 * df_z + t * z_h_z)).sum(axis=1)
        return phi, pi, grad

    def kirchhoff_field_radial(self, data: FieldInitialData, x, t: float, with_rate: bool = False):
        """
        Exact free evolution of radial components (d'Alembert on r u).

        Returns (phi_K, pi_K, grad phi_K) and, with with_rate, also d pi_K / dt.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if t < 0.0:
            raise ValueError("kirchhoff_field_radial needs t >= 0")
        phi, pi, grad = np.zeros(len(x)), np.zeros(len(x)), np.zeros((len(x), 3))
        rate = np.zeros(len(x))
        for comp in data.components:
            if comp.weight == 0.0:
                continue
            cphi, cpi, cgrad, crate = radial_free_wave(comp, x, t, with_rate)
            phi += comp.weight * cphi
            pi += comp.weight * cpi
            grad += comp.weight * cgrad
            rate += comp.weight * crate
        if with_rate:
            return phi, pi, grad, rate
        return phi, pi, grad

    def field_eval(self, density: ChargeDensity, history: TrajectoryHistory, data: FieldInitialData,
                   x, t: float, kirchhoff_method: str = "radial") -> FieldSample:
        """Total field with retarded and Kirchhoff parts kept separately."""
        retarded = FieldPart(*self.lw_field(density, history, x, t))
        if kirchhoff_method == "radial":
            free = FieldPart(*self.kirchhoff_field_radial(data, x, t))
        elif kirchhoff_method == "quadrature":
            free = FieldPart(*self.kirchhoff_field(data, x, t))
        else:
            raise ValueError(f"unknown Kirchhoff method '{kirchhoff_method}'")
        return FieldSample.from_parts(retarded, free)

    # -- far field ---------------------------------------------------------------

    def _support(self, density: ChargeDensity, history: TrajectoryHistory) -> Tuple[np.ndarray, float]:
        center, spread = history.bounding_ball()
        return center, spread + density.support_radius

    def amplitude_window(self, density: ChargeDensity, history: TrajectoryHistory, omega) -> Tuple[float, float]:
        """Range of t whose retarded times t + omega . y over the support are all recorded."""
        omega_arr = normalize_directions(np.atleast_2d(omega))
        center, T = self._support(density, history)
        proj = omega_arr @ center
        lo = 0.0 if history.quiescent_past else max(0.0, float(np.max(T - proj)))
        return lo, history.last_time - float(np.max(proj + T))

    def _slices(self, density: ChargeDensity, history: TrajectoryHistory, om: np.ndarray, t: float):
        """
        Rule for int f(y - q(t + omega . y), t + omega . y) dy that follows the support.

        y = s omega + y_perp: s runs over panels of the support's extent along
        omega, and each slice is a polar disk centred on the projection of
        q(t + s), of radius sqrt(R^2 - (s - omega . q)^2). Returns the relative
        points y - q(tau) (K, n, m_r, m_phi, 3), their weights and (v, a) at the
        slice times (K, n, 3).
        """
        center, T = self._support(density, history)
        R = density.support_radius
        s_rel, w_s = composite_gauss(panel_edges(0.0, 2.0 * T, self.slice_width * R), self.slice_order)
        s = (om @ center - T)[:, None] + s_rel[None, :]
        q, v, a = history.interpolate(t + s)
        offset = s - np.einsum("ki,kni->kn", om, q)
        disk = np.sqrt(np.clip(R ** 2 - offset ** 2, 0.0, None))

        n_r, n_phi = self.disk_order
        u, w_u = gauss_legendre(n_r, 0.0, 1.0)
        angle = 2.0 * np.pi * np.arange(n_phi) / n_phi
        e1, e2 = orthonormal_frame(om)
        ring = np.cos(angle)[None, :, None] * e1[:, None, :] + np.sin(angle)[None, :, None] * e2[:, None, :]
        radial = disk[..., None] * u
        rel = (offset[..., None, None, None] * om[:, None, None, None, :]
               + radial[..., None, None] * ring[:, None, None, :, :])
        weights = (w_s * disk ** 2)[..., None] * (u * w_u) * (2.0 * np.pi / n_phi)
        weights = np.broadcast_to(weights[..., None], rel.shape[:-1])
        return rel, weights, v, a

    def farfield_amplitude(self, density: ChargeDensity, history: TrajectoryHistory, omega, t: float):
        """
        pi-bar(omega, t) = (1/4 pi) int grad rho(y - q(tau)) . q'(tau) dy, tau = t + omega . y.

        Valid for every direction; omega may be (3,) or (K, 3).

        Sign convention: pi-bar is the wave-zone limit of |x| pi_r(x, |x| + t)
        with pi_r the exact time derivative of the retarded potential. That
        fixes the prefactor at +1/4 pi; the -1/4 pi form often quoted for this
        amplitude differs by an overall sign, which |pi-bar|^2 does not see.
        """
        omega_arr = normalize_directions(np.atleast_2d(omega))
        out = np.zeros(len(omega_arr))
        if density.is_zero:
            return out if np.ndim(omega) == 2 else 0.0
        chunk = max(1, self.chunk_size // 4)
        for start in range(0, len(omega_arr), chunk):
            om = omega_arr[start:start + chunk]
            rel, weights, v, _ = self._slices(density, history, om, t)
            grad = density.gradient(rel)
            out[start:start + len(om)] = np.einsum("knrp,knrpi,kni->k", weights, grad, v) / FOUR_PI
        return out if np.ndim(omega) == 2 else float(out[0])

    def farfield_amplitude_axial(self, density: ChargeDensity, history: TrajectoryHistory, omega, t):
        """
        Same amplitude through the axial marginal:
        pi-bar = (1/4 pi) int rho_a'(s - r(t + s)) r'(t + s) ds with r = omega . q.

        Returns shape (K, L) for K directions and L times.
        """
        omega_arr = normalize_directions(np.atleast_2d(omega))
        times = np.atleast_1d(np.asarray(t, dtype=float))
        center, T = self._support(density, history)
        mid = omega_arr @ center
        s, w = gauss_legendre(self.axial_order, mid - T, mid + T)  # (K, n)
        out = np.zeros((len(omega_arr), len(times)))
        block = max(1, self.chunk_size * 64 // self.axial_order)
        for start in range(0, len(times), block):
            tt = times[start:start + block]
            tau = tt[None, :, None] + s[:, None, :]
            q, v, _ = history.interpolate(tau)
            r = np.einsum("ki,kjni->kjn", omega_arr, q)
            r_dot = np.einsum("ki,kjni->kjn", omega_arr, v)
            arg = s[:, None, :] - r
            marginal_slope = -2.0 * np.pi * arg * density.profile(np.abs(arg))
            out[:, start:start + len(tt)] = np.einsum("kn,kjn->kj", w, marginal_slope * r_dot) / FOUR_PI
        if np.ndim(omega) == 1 and np.ndim(t) == 0:
            return float(out[0, 0])
        return out

    def check_cone(self, history: TrajectoryHistory, omega_arr: np.ndarray, eps: float,
                   plane_tolerance: float) -> float:
        """Theta of the record; raises for directions outside the cone or a non-planar trajectory."""
        theta = theta_threshold(history.speed_bound, eps)
        if np.any(np.abs(omega_arr[:, 2]) < theta):
            raise ConeViolationError(f"|omega^3| below Theta={theta:.6g}")
        plane_drift = float(np.max(np.abs(history.positions[:, 2])))
        if plane_drift > plane_tolerance:
            raise ValueError(f"cone formula needs a planar trajectory, max |q3| = {plane_drift:.3e}")
        return theta

    def farfield_amplitude_cone(self, density: ChargeDensity, history: TrajectoryHistory, omega, t: float,
                                eps: Optional[float] = None, plane_tolerance: Optional[float] = None,
                                return_denominator: bool = False):
        """
        Cone form -(1/4 pi) int rho(y - q(tau)) omega.q''(tau) / (1 - omega.q'(tau))^2 dy
        for |omega^3| >= Theta and planar motion (same sign convention as farfield_amplitude).
        """
        eps = settings.cone_eps if eps is None else eps
        plane_tolerance = settings.plane_tolerance if plane_tolerance is None else plane_tolerance
        omega_arr = normalize_directions(np.atleast_2d(omega))
        self.check_cone(history, omega_arr, eps, plane_tolerance)

        out = np.zeros(len(omega_arr))
        denominator = np.inf
        chunk = max(1, self.chunk_size // 4)
        for start in range(0, len(omega_arr), chunk):
            om = omega_arr[start:start + chunk]
            rel, weights, v, a = self._slices(density, history, om, t)
            gap = 1.0 - np.einsum("ki,kni->kn", om, v)
            denominator = min(denominator, float(gap.min()))
            factor = np.einsum("ki,kni->kn", om, a) / gap ** 2
            slab = np.einsum("knrp,knrp->kn", weights, density.density(rel))
            out[start:start + len(om)] = -np.sum(slab * factor, axis=1) / FOUR_PI
        if denominator <= 0.0:
            raise ConeViolationError(f"1 - omega.v reached {denominator:.3e} on the cone")
        logger.debug(f"Cone far field at t={t}: min(1 - omega.v) = {denominator:.4f}")
        value = out if np.ndim(omega) == 2 else float(out[0])
        return (value, denominator) if return_denominator else value


def radial_free_wave(comp: RadialComponent, x: np.ndarray, t: float, with_rate: bool = False):
    """
    Free evolution of one unit-weight radial component at points x.

    With psi(s) = s f(|s|) and G(w) = int_0^w u g(u) du,
    r u(r, t) = [psi(r + t) + psi(r - t) + G(r + t) - G(|r - t|)] / 2.
    """
    rel = x - comp.center
    d_raw = np.linalg.norm(rel, axis=1)
    floor = 1e-6 * (1.0 + t)
    small = d_raw < floor
    d = np.maximum(d_raw, floor)
    unit = rel / np.where(d_raw > 0.0, d_raw, 1.0)[:, None]

    def psi(s):
        return s * comp.phi(np.abs(s))

    def dpsi(s):
        a = np.abs(s)
        return comp.phi(a) + a * comp.dphi(a)

    def d2psi(s):
        a = np.abs(s)
        return np.sign(s) * (2.0 * comp.dphi(a) + a * comp.d2phi(a))

    a, b = d + t, d - t
    ab = np.abs(b)
    g_a, g_b = comp.pi(a), comp.pi(ab)
    N = psi(a) + psi(b) + comp.pi_moment(a) - comp.pi_moment(ab)
    N_d = dpsi(a) + dpsi(b) + a * g_a - b * g_b
    N_t = dpsi(a) - dpsi(b) + a * g_a + b * g_b

    phi = N / (2.0 * d)
    slope = N_d / (2.0 * d) - N / (2.0 * d ** 2)
    pi = N_t / (2.0 * d)

    if np.any(small):
        tt = np.array([t])
        f1, f2 = comp.dphi(tt)[0], comp.d2phi(tt)[0]
        g0, g1 = comp.pi(tt)[0], comp.dpi(tt)[0]
        phi = np.where(small, dpsi(tt)[0] + t * g0, phi)
        pi = np.where(small, 2.0 * f1 + t * f2 + g0 + t * g1, pi)
        slope = np.where(small, 0.0, slope)

    rate = np.zeros_like(phi)
    if with_rate:
        N_tt = d2psi(a) + d2psi(b) + g_a + a * comp.dpi(a) - g_b - ab * comp.dpi(ab)
        rate = N_tt / (2.0 * d)

    if comp.huygens_radius is not None:
        quiet = t > d_raw + comp.huygens_radius
        phi, pi, slope, rate = (np.where(quiet, 0.0, v) for v in (phi, pi, slope, rate))
    return phi, pi, slope[:, None] * unit, rate


# Global instance
field_engine = FieldEngine()
