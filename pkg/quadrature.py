"""
Gauss-Legendre product rules on intervals, spheres and balls.
"""
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=128)
def _reference_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a=0.0, b=1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss points and weights of order n on [a, b].

    a and b may be arrays; the result has shape broadcast(a, b).shape + (n,).
    """
    x, w = _reference_rule(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def split_gauss(n: int, edges, panels: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Order-n rule on every segment of per-row breakpoints, each cut into equal panels.

    edges has shape (..., k + 1); the result has shape (..., k * panels * n).
    Zero-length segments get zero weights.
    """
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[..., :-1, None], edges[..., 1:, None]
    cuts = lo + (hi - lo) * np.linspace(0.0, 1.0, panels + 1)
    x, w = gauss_legendre(n, cuts[..., :-1], cuts[..., 1:])
    shape = edges.shape[:-1] + (-1,)
    return x.reshape(shape), w.reshape(shape)


def composite_gauss(edges: Sequence[float], n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Order-n rule on every panel [edges[i], edges[i+1]] of positive length, flattened."""
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    keep = hi > lo
    x, w = gauss_legendre(n, lo[keep], hi[keep])
    return x.ravel(), w.ravel()


def panel_edges(a: float, b: float, width: float, breaks: Sequence[float] = ()) -> np.ndarray:
    """Panels of at most `width` covering [a, b], split at interior breakpoints."""
    points = sorted({a, b, *[p for p in breaks if a < p < b]})
    edges = [a]
    for lo, hi in zip(points[:-1], points[1:]):
        count = max(1, int(np.ceil((hi - lo) / width)))
        edges.extend(np.linspace(lo, hi, count + 1)[1:])
    return np.asarray(edges)


@lru_cache(maxsize=32)
def sphere_rule(n_mu: int, n_phi: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss in cos(theta) times uniform trapezoid in azimuth; weights sum to 4*pi."""
    mu, w_mu = gauss_legendre(n_mu, -1.0, 1.0)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1.0 - mu ** 2)
    nodes = np.stack([
        np.outer(s, np.cos(phi)),
        np.outer(s, np.sin(phi)),
        np.outer(mu, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    weights = np.outer(w_mu, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def ball_rule(radius: float, order: Tuple[int, int, int],
              center: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Product rule on the ball |y - center| <= radius (r^2 dr dOmega)."""
    n_r, n_mu, n_phi = order
    r, w_r = gauss_legendre(n_r, 0.0, radius)
    dirs, w_dir = sphere_rule(n_mu, n_phi)
    nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = ((w_r * r ** 2)[:, None] * w_dir[None, :]).ravel()
    if center is not None:
        nodes = nodes + np.asarray(center, dtype=float)
    return nodes, weights


def orthonormal_frame(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing each unit `axis` (..., 3) to a right-handed frame."""
    axis = np.asarray(axis, dtype=float)
    helper = np.zeros_like(axis)
    use_x = np.abs(axis[..., 0]) < 0.9
    helper[..., 0] = np.where(use_x, 1.0, 0.0)
    helper[..., 1] = np.where(use_x, 0.0, 1.0)
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(axis, e1)
    return e1, e2


def cap_rule(axis: np.ndarray, mu_min: np.ndarray, n_mu: int,
             n_phi: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Product rule on the spherical caps {n : n . axis >= mu_min}.

    axis has shape (..., 3) and mu_min shape (..., k); returns directions of
    shape (..., k, n_mu * n_phi, 3) and weights (..., k, n_mu * n_phi).
    """
    mu, w_mu = gauss_legendre(n_mu, mu_min, 1.0)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(np.clip(1.0 - mu ** 2, 0.0, None))
    e1, e2 = orthonormal_frame(axis)
    e1 = e1[..., None, None, None, :]
    e2 = e2[..., None, None, None, :]
    e3 = np.asarray(axis, dtype=float)[..., None, None, None, :]
    cos_phi = np.cos(phi)[:, None]
    sin_phi = np.sin(phi)[:, None]
    dirs = (s[..., None, None] * (cos_phi * e1 + sin_phi * e2)
            + mu[..., None, None] * e3)
    weights = w_mu[..., None] * (2.0 * np.pi / n_phi)
    shape = mu.shape[:-1] + (n_mu * n_phi,)
    return dirs.reshape(shape + (3,)), np.broadcast_to(weights, mu.shape + (n_phi,)).reshape(shape)


def panel_ball_rule(radius: float, width: float, order: int, sphere_order: Tuple[int, int],
                    center: Optional[np.ndarray] = None, breaks: Sequence[float] = (),
                    inner: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Shell inner <= |y - center| <= radius with composite radial panels split at `breaks`."""
    r, w_r = composite_gauss(panel_edges(inner, radius, width, breaks), order)
    dirs, w_dir = sphere_rule(*sphere_order)
    nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = ((w_r * r ** 2)[:, None] * w_dir[None, :]).ravel()
    if center is not None:
        nodes = nodes + np.asarray(center, dtype=float)
    return nodes, weights
