"""Named analytic families for initial data.

All families are compactly supported.  ``scale_to_mass`` rescales a sampled
profile so that its discrete integral is exactly the requested mass.
"""
from __future__ import annotations

import numpy as np

from .field import Grid, GridField, integrate


def disk(X, Y, radius=1.0, center=(0.0, 0.0)):
    r = np.hypot(X - center[0], Y - center[1])
    return (r <= radius).astype(float)


def bump(X, Y, radius=1.0, center=(0.0, 0.0), power=4):
    """(1 - (r/R)^2)_+^power, a C^{power-1} bump."""
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius ** 2
    return np.where(r2 < 1.0, np.clip(1.0 - r2, 0.0, None) ** power, 0.0)


def annulus(X, Y, inner=1.0, outer=1.5, center=(0.0, 0.0), power=4):
    """Smooth ring supported on inner < r < outer."""
    r = np.hypot(X - center[0], Y - center[1])
    half = 0.5 * (outer - inner)
    s = (r - inner) * (outer - r) / half ** 2
    return np.where(s > 0.0, np.clip(s, 0.0, None) ** power, 0.0)


def gaussian(X, Y, width=0.3, cutoff=1.0, center=(0.0, 0.0), power=4):
    """Gaussian tapered by a bump so that the support has radius `cutoff`."""
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return np.exp(-0.5 * r2 / width ** 2) * bump(X, Y, cutoff, center, power)


def zero(X, Y):
    return np.zeros_like(X)


FAMILIES = {
    "disk": disk,
    "bump": bump,
    "annulus": annulus,
    "gaussian": gaussian,
    "zero": zero,
}


def make_profile(grid: Grid, family: str, mass: float | None = None, **params) -> GridField:
    try:
        func = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown profile family {family!r}; known: {sorted(FAMILIES)}") from None
    f = grid.sample(lambda X, Y: func(X, Y, **params))
    if mass is not None and family != "zero":
        f = scale_to_mass(f, mass)
    return f


def scale_to_mass(f: GridField, mass: float) -> GridField:
    m = integrate(f)
    if m == 0.0:
        raise ValueError("cannot rescale a profile with zero integral")
    return f * (mass / m)
