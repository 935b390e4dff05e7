"""
Catalog of initial fields (phi0, pi0).

Every entry is a sum of radially symmetric components with closed-form
derivatives, so the free evolution has an exact radial representation and
the spherical-mean quadrature can be cross-checked against it.
"""
from typing import Callable, Dict, Sequence

import numpy as np
from loguru import logger
from scipy.interpolate import CubicHermiteSpline

from core_model import bump_shape, coulomb_radial
from models import ChargeDensity, DecayClass, FieldInitialData, RadialComponent
from quadrature import composite_gauss

MOMENT_NODES = 513


def _zeros(r):
    return np.zeros_like(np.asarray(r, dtype=float))


def _moment_table(g: Callable, support: float) -> Callable:
    """w -> int_0^min(w, support) u g(u) du."""
    nodes = np.linspace(0.0, support, MOMENT_NODES)
    values = np.zeros_like(nodes)
    for i in range(1, len(nodes)):
        x, w = composite_gauss(nodes[i - 1:i + 1], 8)
        values[i] = values[i - 1] + np.sum(w * x * g(x))
    left = np.minimum(nodes, support * (1.0 - 1e-12))
    spline = CubicHermiteSpline(nodes, values, left * g(left))
    return lambda r: spline(np.clip(r, 0.0, support))


def coulomb_component(density: ChargeDensity, center, weight: float = 1.0) -> RadialComponent:
    """s_center: Coulomb field of the density at rest at `center`."""
    return RadialComponent(
        label="coulomb",
        center=np.asarray(center, dtype=float),
        weight=weight,
        phi=lambda r: coulomb_radial(density, r)[0],
        dphi=lambda r: coulomb_radial(density, r)[1],
        d2phi=lambda r: coulomb_radial(density, r)[2],
        pi=_zeros,
        dpi=_zeros,
        pi_moment=_zeros,
        huygens_radius=density.support_radius,
    )


def bump_component(center, radius: float, phi_amplitude: float, pi_amplitude: float) -> RadialComponent:
    """Compact C-infinity pulse: (A b(r/a), B b(r/a)) with b(u) = exp(-1/(1-u^2))."""
    def shape(r, k):
        return bump_shape(r, radius)[k]

    if pi_amplitude != 0.0:
        unit_moment = _moment_table(lambda r: shape(r, 0), radius)
    else:
        unit_moment = _zeros
    scale_phi = phi_amplitude if pi_amplitude == 0.0 else phi_amplitude / pi_amplitude
    # weight carries pi_amplitude when present so pi_moment stays unit-scaled
    if pi_amplitude != 0.0:
        weight = pi_amplitude
    else:
        weight = 1.0 if phi_amplitude != 0.0 else 0.0
    return RadialComponent(
        label="bump",
        center=np.asarray(center, dtype=float),
        weight=weight,
        phi=lambda r: scale_phi * shape(r, 0),
        dphi=lambda r: scale_phi * shape(r, 1),
        d2phi=lambda r: scale_phi * shape(r, 2),
        pi=(lambda r: shape(r, 0)) if pi_amplitude != 0.0 else _zeros,
        dpi=(lambda r: shape(r, 1)) if pi_amplitude != 0.0 else _zeros,
        pi_moment=unit_moment,
        huygens_radius=radius,
    )


def _smooth_step(u):
    """0 for u <= 0, 1 for u >= 1, C-infinity in between; returns (S, S')."""
    u = np.asarray(u, dtype=float)
    mid = (u > 0.0) & (u < 1.0)
    um = np.where(mid, u, 0.5)
    a = np.exp(-1.0 / um)
    b = np.exp(-1.0 / (1.0 - um))
    value = np.where(mid, a / (a + b), np.where(u >= 1.0, 1.0, 0.0))
    slope = np.where(mid, a * b * (1.0 / um ** 2 + 1.0 / (1.0 - um) ** 2) / (a + b) ** 2, 0.0)
    return value, slope


def plateau_component(center, radius: float, width: float, level: float) -> RadialComponent:
    """phi0 = 0, pi0 = level on r <= radius, smoothly zero beyond radius + width."""
    outer = radius + width

    def g(r):
        return _smooth_step((outer - np.asarray(r, dtype=float)) / width)[0]

    def dg(r):
        return -_smooth_step((outer - np.asarray(r, dtype=float)) / width)[1] / width

    return RadialComponent(
        label="plateau",
        center=np.asarray(center, dtype=float),
        weight=level,
        phi=_zeros,
        dphi=_zeros,
        d2phi=_zeros,
        pi=g,
        dpi=dg,
        pi_moment=_moment_table(g, outer),
        huygens_radius=outer,
    )


def power_component(center, sigma: float, phi_amplitude: float, pi_amplitude: float) -> RadialComponent:
    """
    phi0 = A (1+r^2)^(-(sigma-1)/2), pi0 = B (1+r^2)^(-sigma/2).

    |grad phi0| + |pi0| ~ r^(-sigma): finite energy for sigma > 3/2.
    """
    if not sigma > 1.5:
        raise ValueError(f"power-law data needs sigma > 3/2, got {sigma}")
    m = 0.5 * (sigma - 1.0)

    def phi(r):
        return phi_amplitude * (1.0 + r ** 2) ** (-m)

    def dphi(r):
        return -2.0 * m * phi_amplitude * r * (1.0 + r ** 2) ** (-m - 1.0)

    def d2phi(r):
        base = 1.0 + r ** 2
        return -2.0 * m * phi_amplitude * (base ** (-m - 1.0) - 2.0 * (m + 1.0) * r ** 2 * base ** (-m - 2.0))

    def pi(r):
        return pi_amplitude * (1.0 + r ** 2) ** (-0.5 * sigma)

    def dpi(r):
        return -sigma * pi_amplitude * r * (1.0 + r ** 2) ** (-0.5 * sigma - 1.0)

    def pi_moment(w):
        w = np.asarray(w, dtype=float)
        if abs(sigma - 2.0) < 1e-12:
            return 0.5 * pi_amplitude * np.log1p(w ** 2)
        return pi_amplitude * ((1.0 + w ** 2) ** (1.0 - 0.5 * sigma) - 1.0) / (2.0 - sigma)

    return RadialComponent("power", np.asarray(center, dtype=float), 1.0, phi, dphi, d2phi, pi, dpi, pi_moment)


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

def zero_field() -> FieldInitialData:
    return FieldInitialData("zero")


def matched_field(density: ChargeDensity, q0) -> FieldInitialData:
    """(s_q0, 0): the field of a particle at rest at q0; Coulomb tail, admitted only for alpha < 1/2."""
    return FieldInitialData("matched", (coulomb_component(density, q0),), DecayClass("coulomb", sigma=2.0))


def stationary_deviation(data: FieldInitialData, density: ChargeDensity, q_plus) -> FieldInitialData:
    """(phi0 - s_q+, pi0): initial data of the deviation from the stationary state."""
    offset = FieldInitialData("stationary", (coulomb_component(density, q_plus, weight=-1.0),),
                              DecayClass("coulomb", sigma=2.0))
    combined = data.combined(offset, name=f"{data.name}-stationary")
    if data.name == "matched" and np.allclose(data.components[0].center, q_plus):
        # Coulomb tails cancel exactly
        return FieldInitialData(combined.name, combined.components, DecayClass("zero"))
    if data.name == "matched":
        return FieldInitialData(combined.name, combined.components, DecayClass("power", sigma=3.0))
    return combined


def make_field_data(kind: str, density: ChargeDensity, q0: Sequence[float], phi_amplitude: float = 0.0,
                    pi_amplitude: float = 0.0, radius: float = 1.0, width: float = 0.5, sigma: float = 2.5,
                    center: Sequence[float] = (0.0, 0.0, 0.0)) -> FieldInitialData:
    """Catalog lookup: zero, matched, bump, plateau, power."""
    c = np.asarray(center, dtype=float)
    reach = float(np.linalg.norm(c))
    if kind == "zero":
        data = zero_field()
    elif kind == "matched":
        data = matched_field(density, q0)
    elif kind == "bump":
        data = FieldInitialData("bump", (bump_component(c, radius, phi_amplitude, pi_amplitude),),
                                DecayClass("compact", radius=reach + radius))
    elif kind == "plateau":
        data = FieldInitialData("plateau", (plateau_component(c, radius, width, pi_amplitude),),
                                DecayClass("compact", radius=reach + radius + width))
    elif kind == "power":
        data = FieldInitialData("power", (power_component(c, sigma, phi_amplitude, pi_amplitude),),
                                DecayClass("power", sigma=sigma))
    else:
        raise ValueError(f"unknown field data '{kind}'")
    logger.debug(f"Initial field '{kind}' with {len(data.components)} component(s)")
    return data


FIELD_KINDS: Dict[str, str] = {
    "zero": "phi0 = pi0 = 0",
    "matched": "phi0 = s_q0, pi0 = 0 (Coulomb tail)",
    "bump": "compact C-infinity pulse in phi0 and pi0",
    "plateau": "pi0 = level on a ball, smooth compact cut-off",
    "power": "power-law tails of order sigma > 3/2",
}
