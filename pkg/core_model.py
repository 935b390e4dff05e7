"""
Physical ingredients of the wave-particle system.

Charge densities and confining potentials come from a small catalog of
closed-form entries with analytic derivatives. Every density carries dense
radial tables (enclosed charge, Coulomb potential s0, autocorrelation) built
once at construction; hot quadrature loops only evaluate splines.
"""
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from config import settings
from models import ChargeDensity, ConfiningPotential, RadialTables, StationaryState
from quadrature import ball_rule, gauss_legendre, split_gauss

EDGE_TOLERANCE = 1e-12


def _radial_quad(fn: Callable, radius: float, breakpoints: Sequence[float] = ()) -> float:
    points = [p for p in breakpoints if 0.0 < p < radius] or None
    value, _ = integrate.quad(fn, 0.0, radius, points=points, limit=400, epsabs=1e-15, epsrel=1e-13)
    return value


def _clipped(spline: Callable, lo: float, hi: float) -> Callable:
    return lambda r: spline(np.clip(r, lo, hi))


def _segment_integrals(fn: Callable, nodes: np.ndarray, order: int = 8) -> np.ndarray:
    x, w = gauss_legendre(order, nodes[:-1], nodes[1:])
    return np.concatenate([[0.0], np.cumsum((w * fn(x)).sum(axis=-1))])


def _autocorrelation(profile: Callable, moment: Callable, radius: float,
                     l2_norm_sq: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    C(s) = int rho(y) rho(y + s e) dy and C'(s) on [0, 2R] via the shell formula
    C(s) = (2 pi / s) int_0^R u rho(u) [P(u + s) - P(|u - s|)] du.
    """
    s = np.linspace(0.0, 2.0 * radius, n_nodes)
    sp = s[1:]
    # the integrand is non-analytic where u, u + s or |u - s| meets the support edge
    kinks = np.sort(np.clip(np.stack([sp, np.abs(radius - sp)], axis=1), 0.0, radius), axis=1)
    edges = np.concatenate([np.zeros((len(sp), 1)), kinks, np.full((len(sp), 1), radius)], axis=1)
    u, w = split_gauss(24, edges, settings.autocorrelation_panels)
    spc = sp[:, None]

    def flux(v):
        return moment(np.clip(v, 0.0, radius))

    def edge(v):
        return np.where(np.abs(v) < radius, v * profile(np.abs(v)), 0.0)

    weight = w * u * profile(u)
    inner = (weight * (flux(u + spc) - flux(np.abs(u - spc)))).sum(axis=-1)
    slope_inner = (weight * (edge(u + spc) - edge(spc - u))).sum(axis=-1)
    value = np.concatenate([[l2_norm_sq], 2.0 * np.pi * inner / sp])
    slope = np.concatenate([[0.0], 2.0 * np.pi * slope_inner / sp - value[1:] / sp])
    return s, value, slope


def build_radial_tables(profile: Callable, radius: float, l2_norm_sq: float,
                        breakpoints: Sequence[float] = ()) -> RadialTables:
    """Enclosed charge, first moment, interior potential and autocorrelation tables."""
    # each interior jump of rho gets a node pair straddling it
    straddle = [p * f for p in breakpoints if 0.0 < p < radius for f in (1.0 - 1e-12, 1.0 + 1e-12)]
    nodes = np.union1d(np.linspace(0.0, radius, settings.potential_table_nodes), straddle)
    # derivatives use the left limit at the support edge
    left = np.minimum(nodes, radius * (1.0 - 1e-12))
    rho = profile(left)

    enclosed = _segment_integrals(lambda r: r ** 2 * profile(r), nodes)
    moment = _segment_integrals(lambda r: r * profile(r), nodes)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(nodes > 0.0, enclosed / np.where(nodes > 0.0, nodes, 1.0) ** 2, 0.0)
        potential = np.where(nodes > 0.0, -enclosed / np.where(nodes > 0.0, nodes, 1.0), 0.0)
    potential -= moment[-1] - moment

    enclosed_spline = _clipped(CubicHermiteSpline(nodes, enclosed, nodes ** 2 * rho), 0.0, radius)
    moment_spline = _clipped(CubicHermiteSpline(nodes, moment, nodes * rho), 0.0, radius)
    potential_spline = CubicHermiteSpline(nodes, potential, slope)

    s, auto, auto_slope = _autocorrelation(profile, moment_spline, radius, l2_norm_sq,
                                           settings.autocorrelation_nodes)
    auto_spline = CubicHermiteSpline(s, auto, auto_slope)
    slope_spline = CubicSpline(s, auto_slope)
    curvature_spline = slope_spline.derivative()
    support = 2.0 * radius

    def outside_zero(spline):
        return lambda r: np.where(np.asarray(r) < support, spline(np.clip(r, 0.0, support)), 0.0)

    return RadialTables(
        enclosed=enclosed_spline,
        moment=moment_spline,
        potential=potential_spline,
        autocorrelation=outside_zero(auto_spline),
        autocorrelation_slope=outside_zero(slope_spline),
        autocorrelation_curvature=outside_zero(curvature_spline),
    )


def make_charge_density(profile: Callable, gradient_profile: Callable, support_radius: float,
                        orders: Optional[Tuple[int, int, int]] = None, name: str = "custom",
                        curvature_profile: Optional[Callable] = None, smooth: bool = True,
                        breakpoints: Sequence[float] = ()) -> ChargeDensity:
    """
    Validate a radial profile and cache Q, ||rho||^2 and the radial tables.

    Raises ValueError for a nonpositive radius or a profile that does not
    vanish at the support edge.
    """
    if not support_radius > 0.0:
        raise ValueError(f"support radius must be positive, got {support_radius}")
    edge = float(np.asarray(profile(np.array([support_radius])))[0])
    if abs(edge) > EDGE_TOLERANCE:
        raise ValueError(f"profile must vanish at the support edge, profile(R)={edge:.3e}")

    def scalar(fn):
        return lambda r: float(fn(np.array([r]))[0])

    rho = scalar(profile)
    total_charge = 4.0 * np.pi * _radial_quad(lambda r: r * r * rho(r), support_radius, breakpoints)
    l2_norm_sq = 4.0 * np.pi * _radial_quad(lambda r: (r * rho(r)) ** 2, support_radius, breakpoints)
    tables = build_radial_tables(profile, support_radius, l2_norm_sq, breakpoints)

    density = ChargeDensity(
        name=name,
        profile=profile,
        gradient_profile=gradient_profile,
        support_radius=float(support_radius),
        quadrature_order=tuple(orders or settings.ball_order),
        total_charge=total_charge,
        l2_norm_sq=l2_norm_sq,
        curvature_profile=curvature_profile,
        smooth=smooth,
        breakpoints=tuple(breakpoints),
        tables=tables,
    )
    if not smooth:
        logger.warning(f"Density '{name}' is not smooth; admitted as a test oracle only")
    logger.debug(f"Density '{name}': R={support_radius}, Q={total_charge:.12g}, |rho|^2={l2_norm_sq:.12g}")
    return density


# ---------------------------------------------------------------------------
# Density catalog
# ---------------------------------------------------------------------------

def bump_shape(r: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(-1/(1-x^2)) with its first two r-derivatives, x = r/R."""
    r = np.asarray(r, dtype=float)
    inside = r < radius
    x = np.where(inside, r / radius, 0.0)
    gap = 1.0 - x ** 2
    value = np.where(inside, np.exp(-1.0 / gap), 0.0)
    h = -2.0 * x / (radius * gap ** 2)
    dh = -2.0 * (1.0 + 3.0 * x ** 2) / (radius ** 2 * gap ** 3)
    return value, value * h, value * (h ** 2 + dh)


def make_bump_density(radius: float = 1.0, charge: float = 1.0,
                      orders: Optional[Tuple[int, int, int]] = None) -> ChargeDensity:
    """Smooth bump A exp(-1/(1-(r/R)^2)), A fixed by the total charge."""
    if not radius > 0.0:
        raise ValueError(f"support radius must be positive, got {radius}")
    raw = _radial_quad(lambda r: r * r * float(bump_shape(np.array([r]), radius)[0][0]), radius)
    amplitude = charge / (4.0 * np.pi * raw)

    return make_charge_density(
        profile=lambda r: amplitude * bump_shape(r, radius)[0],
        gradient_profile=lambda r: amplitude * bump_shape(r, radius)[1],
        curvature_profile=lambda r: amplitude * bump_shape(r, radius)[2],
        support_radius=radius,
        orders=orders,
        name="bump",
    )


def _layer(lo: float, hi: float, level: float) -> Callable:
    return lambda r: np.where((np.asarray(r) >= lo) & (np.asarray(r) < hi), level, 0.0)


def _zero_profile(r):
    return np.zeros_like(np.asarray(r, dtype=float))


def make_uniform_ball(radius: float = 1.0, charge: float = 1.0,
                      orders: Optional[Tuple[int, int, int]] = None) -> ChargeDensity:
    """Constant density on r < R (non-smooth oracle)."""
    level = 3.0 * charge / (4.0 * np.pi * radius ** 3)
    return make_charge_density(_layer(0.0, radius, level), _zero_profile, radius, orders,
                               name="uniform_ball", curvature_profile=_zero_profile, smooth=False)


def make_shell_density(radius: float = 1.0, charge: float = 1.0, thickness: Optional[float] = None,
                       orders: Optional[Tuple[int, int, int]] = None) -> ChargeDensity:
    """Uniform layer R - delta <= r < R standing in for a surface shell (non-smooth oracle)."""
    delta = thickness if thickness is not None else settings.shell_thickness_fraction * radius
    if not 0.0 < delta < radius:
        raise ValueError(f"shell thickness must lie in (0, R), got {delta}")
    inner = radius - delta
    level = 3.0 * charge / (4.0 * np.pi * (radius ** 3 - inner ** 3))
    return make_charge_density(_layer(inner, radius, level), _zero_profile, radius, orders,
                               name="shell", curvature_profile=_zero_profile, smooth=False,
                               breakpoints=(inner,))


def make_zero_density(radius: float = 1.0, orders: Optional[Tuple[int, int, int]] = None) -> ChargeDensity:
    """Coupling switched off."""
    return make_charge_density(_zero_profile, _zero_profile, radius, orders, name="zero",
                               curvature_profile=_zero_profile)


DENSITY_CATALOG: Dict[str, Callable[..., ChargeDensity]] = {
    "bump": make_bump_density,
    "uniform_ball": make_uniform_ball,
    "shell": make_shell_density,
    "zero": make_zero_density,
}


def make_density(kind: str, **params) -> ChargeDensity:
    """Catalog lookup by config key."""
    if kind not in DENSITY_CATALOG:
        raise ValueError(f"unknown density '{kind}', expected one of {sorted(DENSITY_CATALOG)}")
    if kind == "zero":
        params.pop("charge", None)
    if kind != "shell":
        params.pop("thickness", None)
    return DENSITY_CATALOG[kind](**params)


# ---------------------------------------------------------------------------
# Potential catalog
# ---------------------------------------------------------------------------

def make_harmonic_potential(nu0: float = 1.0, center=(0.0, 0.0, 0.0)) -> ConfiningPotential:
    """V = nu0^2 |q - c|^2 / 2."""
    c = np.asarray(center, dtype=float)
    k = nu0 ** 2
    return ConfiningPotential(
        name="harmonic",
        value=lambda q: 0.5 * k * np.sum((np.asarray(q) - c) ** 2, axis=-1),
        gradient=lambda q: k * (np.asarray(q) - c),
        hessian=lambda q: k * np.broadcast_to(np.eye(3), np.shape(q)[:-1] + (3, 3)).copy(),
        minimum=c,
        nu0_squared=k,
        params={"nu0": nu0},
    )


def make_quartic_potential(nu0: float = 1.0, lam: float = 0.1, center=(0.0, 0.0, 0.0)) -> ConfiningPotential:
    """V = nu0^2 |q - c|^2 / 2 + lam |q - c|^4 / 4."""
    c = np.asarray(center, dtype=float)
    k = nu0 ** 2

    def value(q):
        d2 = np.sum((np.asarray(q) - c) ** 2, axis=-1)
        return 0.5 * k * d2 + 0.25 * lam * d2 ** 2

    def gradient(q):
        d = np.asarray(q) - c
        d2 = np.sum(d ** 2, axis=-1, keepdims=True)
        return (k + lam * d2) * d

    def hessian(q):
        d = np.asarray(q) - c
        d2 = np.sum(d ** 2, axis=-1)[..., None, None]
        return (k + lam * d2) * np.eye(3) + 2.0 * lam * d[..., :, None] * d[..., None, :]

    return ConfiningPotential("quartic", value, gradient, hessian, c, k, {"nu0": nu0, "lambda": lam})


POTENTIAL_CATALOG: Dict[str, Callable[..., ConfiningPotential]] = {
    "harmonic": make_harmonic_potential,
    "quartic": make_quartic_potential,
}


def make_potential(kind: str, **params) -> ConfiningPotential:
    if kind not in POTENTIAL_CATALOG:
        raise ValueError(f"unknown potential '{kind}', expected one of {sorted(POTENTIAL_CATALOG)}")
    if kind == "harmonic":
        params.pop("lam", None)
    return POTENTIAL_CATALOG[kind](**params)


def check_confinement(potential: ConfiningPotential, radii: Sequence[float] = (10.0, 100.0, 1000.0),
                      directions: int = 26) -> bool:
    """V grows along sample rays at increasing radii."""
    rays = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                     if (i, j, k) != (0, 0, 0)], dtype=float)[:directions]
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    floor = float(potential.value(potential.minimum))
    previous = np.full(len(rays), floor)
    for radius in radii:
        current = potential.value(potential.minimum + radius * rays)
        if np.any(current <= previous):
            return False
        previous = current
    return True


def check_plane_symmetry(potential: ConfiningPotential, samples: int = 100, seed: int = 0,
                         scale: float = 5.0) -> float:
    """max |d3 V(x1, x2, 0)| over random planar points; zero for a plane-symmetric V."""
    rng = np.random.default_rng(seed)
    points = np.zeros((samples, 3))
    points[:, :2] = rng.uniform(-scale, scale, size=(samples, 2))
    return float(np.max(np.abs(potential.gradient(points)[:, 2])))


# ---------------------------------------------------------------------------
# Coulomb field and energies
# ---------------------------------------------------------------------------

def coulomb_radial(density: ChargeDensity, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """s0(r) with s0'(r) and s0''(r); exterior branch -Q/(4 pi r) for r >= R."""
    r = np.asarray(r, dtype=float)
    R = density.support_radius
    Q = density.total_charge
    tables = density.tables
    inside = r < R
    ri = np.where(inside, r, 0.5 * R)
    ro = np.where(inside, R, r)

    enclosed = tables.enclosed(ri)
    tiny = ri < 1e-8 * R
    ri_safe = np.where(tiny, 1.0, ri)
    rho_i = density.profile(ri)
    slope_i = np.where(tiny, 0.0, enclosed / ri_safe ** 2)
    curve_i = np.where(tiny, rho_i / 3.0, rho_i - 2.0 * enclosed / ri_safe ** 3)

    value = np.where(inside, tables.potential(ri), -Q / (4.0 * np.pi * ro))
    slope = np.where(inside, slope_i, Q / (4.0 * np.pi * ro ** 2))
    curve = np.where(inside, curve_i, -2.0 * Q / (4.0 * np.pi * ro ** 3))
    return value, slope, curve


def coulomb_field(density: ChargeDensity, center, x) -> np.ndarray:
    """s_center(x) = -int rho(y - center) / (4 pi |y - x|) dy."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(center, dtype=float), axis=-1)
    return coulomb_radial(density, r)[0]


def coulomb_gradient(density: ChargeDensity, center, x) -> np.ndarray:
    rel = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(rel, axis=-1)
    slope = coulomb_radial(density, r)[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0.0, slope / np.where(r > 0.0, r, 1.0), 0.0)
    return scale[..., None] * rel


def coulomb_hessian(density: ChargeDensity, center, x) -> np.ndarray:
    """Hessian of s_center: s0'' x^ x^T + (s0'/r)(I - x^ x^T)."""
    rel = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(rel, axis=-1)
    _, slope, curve = coulomb_radial(density, r)
    tiny = r < 1e-8 * density.support_radius
    safe = np.where(tiny, 1.0, r)
    ratio = np.where(tiny, curve, slope / safe)
    unit = rel / safe[..., None]
    outer = unit[..., :, None] * unit[..., None, :]
    return curve[..., None, None] * outer + ratio[..., None, None] * (np.eye(3) - outer)


def stationary_state(density: ChargeDensity, potential: ConfiningPotential,
                     center: Optional[np.ndarray] = None) -> StationaryState:
    """S_q for a critical point q of V (default: the designated minimum)."""
    c = potential.minimum if center is None else np.asarray(center, dtype=float)
    if np.linalg.norm(potential.gradient(c)) > 1e-10:
        raise ValueError(f"{c} is not a critical point of V")
    return StationaryState(
        center=c,
        coulomb_field=lambda x: coulomb_field(density, c, x),
        energy=stationary_energy(density, potential, c),
    )


def self_energy(density: ChargeDensity) -> float:
    """<rho, Laplacian^-1 rho> = int 4 pi r^2 rho(r) s0(r) dr (never positive)."""
    if density.is_zero:
        return 0.0

    def integrand(r):
        rr = np.array([r])
        return 4.0 * np.pi * r * r * float(density.profile(rr)[0]) * float(density.tables.potential(rr)[0])

    return _radial_quad(integrand, density.support_radius, density.breakpoints)


def nu1_squared(density: ChargeDensity) -> float:
    """nu1^2 = ||rho||^2 / 3."""
    return density.l2_norm_sq / 3.0


def nu1_squared_mixed(density: ChargeDensity, order: Tuple[int, int, int] = (64, 8, 16)) -> float:
    """-int d1 s0(x) d1 rho(x) dx by ball quadrature; equals nu1_squared for radial rho."""
    nodes, weights = ball_rule(density.support_radius, order)
    grad_s = coulomb_gradient(density, np.zeros(3), nodes)
    grad_rho = density.gradient(nodes)
    return float(-np.sum(weights * grad_s[:, 0] * grad_rho[:, 0]))


def stationary_energy(density: ChargeDensity, potential: ConfiningPotential, q) -> float:
    """H(S_q) = V(q) + self_energy / 2."""
    return float(potential.value(np.asarray(q, dtype=float))) + 0.5 * self_energy(density)
