"""Method-of-lines transport on the cell-centred grid.

Densities are updated in flux form.  Face values use the third-order
upwind-biased reconstruction; faces on the box boundary carry no flux, which
is harmless because supports are required to stay away from the edge.

Face arrays: ``Fx[a, j]`` sits on the x-face between cells a-1 and a
(a = 0..n, shape (n+1, n)); ``Fy[i, b]`` likewise in y (shape (n, n+1)).
"""
from __future__ import annotations

import numpy as np


def _extrapolate_pad(a: np.ndarray, width: int) -> np.ndarray:
    """Pad the last two axes by linear extrapolation."""
    out = a
    for axis in (-2, -1):
        n = out.shape[axis]
        lo0 = np.take(out, [0], axis=axis)
        lo1 = np.take(out, [1], axis=axis)
        hi0 = np.take(out, [n - 1], axis=axis)
        hi1 = np.take(out, [n - 2], axis=axis)
        lows = [lo0 + k * (lo0 - lo1) for k in range(width, 0, -1)]
        highs = [hi0 + k * (hi0 - hi1) for k in range(1, width + 1)]
        out = np.concatenate(lows + [out] + highs, axis=axis)
    return out


def face_velocities_from_stream(phi: np.ndarray, h: float):
    """Face-normal velocities of V = (d_y phi, -d_x phi), discretely divergence-free.

    phi is sampled at cell centres; corner values are four-cell averages.
    """
    p = _extrapolate_pad(phi, 1)
    c = 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])  # (n+1, n+1)
    u = (c[:, 1:] - c[:, :-1]) / h  # (n+1, n)
    v = -(c[1:, :] - c[:-1, :]) / h  # (n, n+1)
    return u, v


def face_velocities_from_cells(vel: np.ndarray):
    """Face-normal velocities by averaging adjacent cell-centre values."""
    vx, vy = vel
    u = np.zeros((vx.shape[0] + 1, vx.shape[1]))
    u[1:-1] = 0.5 * (vx[1:] + vx[:-1])
    v = np.zeros((vy.shape[0], vy.shape[1] + 1))
    v[:, 1:-1] = 0.5 * (vy[:, 1:] + vy[:, :-1])
    return u, v


def _upwind3_faces(q: np.ndarray, axis: int, vel: np.ndarray) -> np.ndarray:
    qs = np.moveaxis(q, axis, 0)
    n = qs.shape[0]
    p = np.zeros((n + 4,) + qs.shape[1:])
    p[2:-2] = qs
    # face a (a = 0..n) lies between padded cells a+1 and a+2
    qm2, qm1, qp0, qp1 = p[0:n + 1], p[1:n + 2], p[2:n + 3], p[3:n + 4]
    plus = (-qm2 + 5.0 * qm1 + 2.0 * qp0) / 6.0
    minus = (2.0 * qm1 + 5.0 * qp0 - qp1) / 6.0
    w = np.moveaxis(vel, axis, 0)
    flux = np.where(w > 0.0, plus, minus) * w
    flux[0] = 0.0
    flux[-1] = 0.0
    return np.moveaxis(flux, 0, axis)


def fluxes(q: np.ndarray, u: np.ndarray, v: np.ndarray):
    return _upwind3_faces(q, 0, u), _upwind3_faces(q, 1, v)


def flux_divergence(Fx: np.ndarray, Fy: np.ndarray, h: float) -> np.ndarray:
    return (Fx[1:] - Fx[:-1] + Fy[:, 1:] - Fy[:, :-1]) / h


def limit_outflow(q0: np.ndarray, Fx: np.ndarray, Fy: np.ndarray, dt: float, h: float):
    """Scale donor-cell outflows so that q0 - dt div(F) stays nonnegative.

    Each face flux is scaled by the factor of its donor cell, so the update
    remains conservative.  Roundoff-level negative samples count as empty.
    """
    q0 = np.maximum(q0, 0.0)
    out = (np.maximum(Fx[1:], 0.0) + np.maximum(-Fx[:-1], 0.0)
           + np.maximum(Fy[:, 1:], 0.0) + np.maximum(-Fy[:, :-1], 0.0)) * dt / h
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(out > q0, q0 / np.where(out > 0, out, 1.0), 1.0)
    theta = np.clip(theta, 0.0, 1.0)
    if np.all(theta == 1.0):
        return Fx, Fy
    n = q0.shape[0]
    tx = np.ones((n + 2, n))
    tx[1:-1] = theta
    # face a: donor is cell a-1 (padded a) when flux > 0, cell a (padded a+1) otherwise
    Fx = Fx * np.where(Fx > 0, tx[:-1], tx[1:])
    ty = np.ones((n, n + 2))
    ty[:, 1:-1] = theta
    Fy = Fy * np.where(Fy > 0, ty[:, :-1], ty[:, 1:])
    return Fx, Fy


def advective_derivative(f: np.ndarray, vel: np.ndarray, h: float) -> np.ndarray:
    """(vel . grad) f with third-order upwind-biased differences, f of shape (..., n, n)."""
    p = _extrapolate_pad(f, 2)
    out = np.zeros_like(f)
    n = f.shape[-1]
    for axis, w in ((-2, vel[0]), (-1, vel[1])):
        def sl(k):
            idx = [slice(None)] * p.ndim
            idx[axis] = slice(2 + k, 2 + k + n)
            other = -1 if axis == -2 else -2
            idx[other] = slice(2, 2 + n)
            return p[tuple(idx)]
        fm2, fm1, f0, fp1, fp2 = sl(-2), sl(-1), sl(0), sl(1), sl(2)
        dplus = (fm2 - 6.0 * fm1 + 3.0 * f0 + 2.0 * fp1) / (6.0 * h)
        dminus = (-2.0 * fm1 - 3.0 * f0 + 6.0 * fp1 - fp2) / (6.0 * h)
        out = out + w * np.where(w > 0.0, dplus, dminus)
    return out


def is_nonnegative(q: np.ndarray, rtol: float = 1e-12) -> bool:
    """True when q is nonnegative up to roundoff relative to its maximum."""
    return float(np.min(q)) >= -rtol * float(np.max(np.abs(q), initial=0.0))


def rk4_weights():
    return (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)
