"""Coulomb kernel and Biot-Savart velocity reconstruction V = -perp(grad g) * mu.

The perpendicular operator is fixed to (x, y)^perp = (-y, x), so a positive
point vortex at the origin induces the counter-clockwise field
x^perp / (2 pi |x|^2).
"""
from __future__ import annotations

import numpy as np

from .errors import NormalizationError, SingularInputError
from .field import (
    GridField,
    TWO_PI,
    gradient,
    integrate,
    interpolate,
    poisson_green_convolve,
    support_radius,
)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _nonzero(r2):
    if np.any(r2 == 0.0):
        raise SingularInputError("the Coulomb kernel is singular at the origin")


def green_kernel(x):
    """g(x) = -ln|x| / (2 pi); accepts (2,) or (..., 2)."""
    x = _vec(x)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return -np.log(r2) / (2.0 * TWO_PI)


def grad_green(x):
    """grad g(x) = -x / (2 pi |x|^2)."""
    x = _vec(x)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return -x / (TWO_PI * r2[..., None])


def grad_green_eps(x, eps: float):
    x = _vec(x)
    r2 = np.sum(x * x, axis=-1) + eps ** 2
    return -x / (TWO_PI * r2[..., None])


def perp(v):
    """Rotation by +pi/2 along the last axis: (x, y) -> (-y, x)."""
    v = _vec(v)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def perp_field(vec: np.ndarray) -> np.ndarray:
    """perp for component-first arrays of shape (2, ...)."""
    return np.stack([-vec[1], vec[0]])


def velocity_from_stream(psi: np.ndarray, h: float) -> np.ndarray:
    """V = -perp(grad psi) = (d_y psi, -d_x psi) by central differences."""
    g = gradient(psi, h)
    return np.stack([g[1], -g[0]])


def velocity_from_vorticity(mu: GridField, *, check: bool = True) -> GridField:
    psi = poisson_green_convolve(mu, check=check)
    return GridField(mu.grid, velocity_from_stream(psi.values, mu.grid.h))


def particle_velocity_contribution(Q, weights, x, eps: float):
    """sum_k w_k * (-perp(grad g_eps(x - q_k))) at point(s) x."""
    if eps <= 0:
        raise ValueError("blob width must be positive")
    Q = np.atleast_2d(_vec(Q)).reshape(-1, 2)
    w = np.atleast_1d(_vec(weights))
    pts = _vec(x)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.zeros_like(pts)
    if Q.shape[0]:
        # chunk over evaluation points to bound memory
        for s in range(0, len(pts), 4096):
            d = pts[s:s + 4096, None, :] - Q[None, :, :]
            gg = grad_green_eps(d, eps)
            out[s:s + 4096] = -np.einsum("k,mkc->mc", w, perp(gg))
    return out[0] if single else out


def far_field_deficit(mu: GridField, radii, n_angles: int = 64) -> list[float]:
    """max over angles of |V(x) - (int mu) x^perp / (2 pi |x|^2)| * r^2, per radius."""
    R = support_radius(mu)
    radii = [float(r) for r in radii]
    for r in radii:
        if r <= R:
            raise ValueError(f"radius {r} lies inside the support radius {R}")
    V = velocity_from_vorticity(mu)
    mass = integrate(mu)
    theta = np.linspace(0.0, TWO_PI, n_angles, endpoint=False)
    out = []
    for r in radii:
        pts = r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        vals = interpolate(V, pts)
        lead = mass / TWO_PI * perp(pts) / r ** 2
        out.append(float(np.max(np.linalg.norm(vals - lead, axis=-1)) * r ** 2))
    return out


def vbar_field(total_mass: float, chi: GridField) -> GridField:
    """Reference far field -(total mass) perp(grad g) * chi for a unit-mass cutoff chi."""
    m = integrate(chi)
    if abs(m - 1.0) > 1e-6:
        raise NormalizationError(f"cutoff must integrate to 1, got {m:.8f}")
    return velocity_from_vorticity(chi) * float(total_mass)
