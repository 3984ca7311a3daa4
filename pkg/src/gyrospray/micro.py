"""The N-particle / vorticity system.

    d_t w_N + div(w_N V_N) = 0
    q_i' = p_i
    p_i' = p_i^perp - (grad g * w_N)(q_i) - (1/N) sum_{j != i} grad g(q_i - q_j)
    V_N = -perp(grad g) * (w_N + rho_N),   rho_N = (1/N) sum_k delta_{q_k}

Particle-particle forces use the exact kernel.  The particle part of V_N that
transports w_N is a blob field of width eps, evaluated particle-mesh style:
weights are deposited with cloud-in-cell and convolved with the blob stream
function.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import transport as tr
from ._pairs import pair_energy, pair_grad_sum
from .biot_savart import perp, velocity_from_stream
from .errors import CFLError, CollisionError, SupportError
from .field import (
    CubicInterpolant,
    Grid,
    GridField,
    blob_table_hat,
    check_support,
    green_table_hat,
    integrate,
    pad_hat,
    unpad,
)

COLLISION_FLOOR = 1e-10


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True).reshape(-1, 2)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleEnsemble:
    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        Q, P = _readonly(self.Q), _readonly(self.P)
        if Q.shape != P.shape:
            raise ValueError("positions and momenta must have the same shape")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
            raise ValueError("particle data must be finite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    def permuted(self, perm) -> "ParticleEnsemble":
        return ParticleEnsemble(self.Q[perm], self.P[perm])


@dataclass(frozen=True)
class MicroState:
    omega: GridField
    particles: ParticleEnsemble
    t: float = 0.0
    eps: float | None = field(default=None)

    def __post_init__(self):
        if not self.omega.is_scalar:
            raise ValueError("omega_N must be a scalar field")
        if self.eps is None:
            object.__setattr__(self, "eps", 2.0 * self.omega.grid.h)
        if self.eps <= 0:
            raise ValueError("blob width must be positive")

    @property
    def grid(self) -> Grid:
        return self.omega.grid

    @property
    def N(self) -> int:
        return self.particles.N


class MicroEnergy(NamedTuple):
    kinetic: float
    interaction: float
    total: float


def deposit_cic(grid: Grid, Q: np.ndarray, weights) -> np.ndarray:
    """Cloud-in-cell deposit of point weights onto cell centres (returns weights, not densities)."""
    out = np.zeros((grid.n, grid.n))
    if len(Q) == 0:
        return out
    s = (Q + grid.L) / grid.h - 0.5
    i = np.floor(s).astype(int)
    if np.any(i < 0) or np.any(i > grid.n - 2):
        raise SupportError("particle outside the interior of the grid")
    t = s - i
    w = np.broadcast_to(np.asarray(weights, dtype=float), (len(Q),))
    ix, iy = i[:, 0], i[:, 1]
    tx, ty = t[:, 0], t[:, 1]
    np.add.at(out, (ix, iy), w * (1 - tx) * (1 - ty))
    np.add.at(out, (ix + 1, iy), w * tx * (1 - ty))
    np.add.at(out, (ix, iy + 1), w * (1 - tx) * ty)
    np.add.at(out, (ix + 1, iy + 1), w * tx * ty)
    return out


def _check_particles_inside(grid: Grid, Q: np.ndarray):
    if len(Q) and np.max(np.abs(Q)) > grid.L - 2.0 * grid.h:
        raise SupportError("a particle left the safe interior of the box")


class _Eval(NamedTuple):
    psi_omega: np.ndarray  # g * w_N on the grid
    phi: np.ndarray  # total stream function (grid part + blob particle part)
    spline: CubicInterpolant  # of psi_omega


def _potentials(grid: Grid, omega: np.ndarray, Q: np.ndarray, eps: float) -> _Eval:
    n = grid.n
    psi = grid.h ** 2 * unpad(pad_hat(omega) * green_table_hat(grid), n)
    phi = psi
    if len(Q):
        dep = deposit_cic(grid, Q, 1.0 / len(Q))
        phi = psi + unpad(pad_hat(dep) * blob_table_hat(grid, float(eps)), n)
    return _Eval(psi, phi, CubicInterpolant(GridField(grid, psi)))


def _pair_forces(Q: np.ndarray, L: float) -> np.ndarray:
    N = len(Q)
    if N < 2:
        return np.zeros((N, 2))
    F, dmin = pair_grad_sum(np.ascontiguousarray(Q))
    if dmin < COLLISION_FLOOR * L:
        raise CollisionError(f"particles within {dmin:.3e} of each other")
    return F / N


def _forces(grid: Grid, ev: _Eval, Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    if len(Q) == 0:
        return np.zeros((0, 2))
    _check_particles_inside(grid, Q)
    return perp(P) - ev.spline.gradient(Q) - _pair_forces(Q, grid.L)


def particle_forces(state: MicroState) -> np.ndarray:
    """Right-hand side of the momentum equation for every particle, shape (N, 2)."""
    Q, P = state.particles.Q, state.particles.P
    ev = _potentials(state.grid, state.omega.values, Q, state.eps)
    return _forces(state.grid, ev, Q, P)


def fluid_velocity(state: MicroState) -> GridField:
    """V_N at cell centres: grid vorticity part plus blob particle part."""
    ev = _potentials(state.grid, state.omega.values, state.particles.Q, state.eps)
    return GridField(state.grid, velocity_from_stream(ev.phi, state.grid.h))


def microscopic_energy(state: MicroState) -> MicroEnergy:
    grid = state.grid
    Q, P = state.particles.Q, state.particles.P
    N = len(Q)
    ev = _potentials(grid, state.omega.values, Q, state.eps)
    inter = grid.h ** 2 * float(np.sum(ev.psi_omega * state.omega.values))
    kin = 0.0
    if N:
        kin = float(np.sum(P * P)) / N
        inter += 2.0 / N * float(np.sum(ev.spline(Q)))
        if N > 1:
            pe, dmin = pair_energy(np.ascontiguousarray(Q), np.full(N, 1.0 / N))
            if dmin < COLLISION_FLOOR * grid.L:
                raise CollisionError(f"particles within {dmin:.3e} of each other")
            inter += pe
    return MicroEnergy(kin, inter, kin + inter)


def _rhs(grid: Grid, omega: np.ndarray, Q: np.ndarray, P: np.ndarray, eps: float):
    if not omega.any():
        # zero vorticity carries no flux and pushes no particle: skip the grid
        n = grid.n
        if len(Q):
            _check_particles_inside(grid, Q)
        Pdot = perp(P) - _pair_forces(Q, grid.L) if len(Q) else np.zeros((0, 2))
        return np.zeros((n + 1, n)), np.zeros((n, n + 1)), P.copy(), Pdot, 0.0
    ev = _potentials(grid, omega, Q, eps)
    u, v = tr.face_velocities_from_stream(ev.phi, grid.h)
    Fx, Fy = tr.fluxes(omega, u, v)
    Pdot = _forces(grid, ev, Q, P)
    speed = max(np.max(np.abs(u)), np.max(np.abs(v)))
    return Fx, Fy, P.copy(), Pdot, speed


def max_stable_dt(state: MicroState, cfl: float = 0.8) -> float:
    grid = state.grid
    ev = _potentials(grid, state.omega.values, state.particles.Q, state.eps)
    u, v = tr.face_velocities_from_stream(ev.phi, grid.h)
    vmax = max(np.max(np.abs(u)), np.max(np.abs(v)))
    pmax = float(np.max(np.abs(state.particles.P), initial=0.0))
    return cfl * grid.h / (vmax + pmax + 1.0)


def step_micro(state: MicroState, dt: float, cfl: float = 0.8, limit: bool = True) -> MicroState:
    """One classical RK4 step of particles and vorticity with a shared dt."""
    grid, h, eps = state.grid, state.grid.h, state.eps
    w0 = state.omega.values
    Q0, P0 = np.asarray(state.particles.Q), np.asarray(state.particles.P)
    check_support(state.omega)

    stages = []
    Fx, Fy, dQ, dP, speed = _rhs(grid, w0, Q0, P0, eps)
    pmax = float(np.max(np.abs(P0), initial=0.0))
    if dt > cfl * h / (speed + pmax + 1.0):
        raise CFLError(f"dt={dt} exceeds the CFL limit {cfl * h / (speed + pmax + 1.0):.3e}")
    stages.append((Fx, Fy, dQ, dP))
    for c in (0.5, 0.5, 1.0):
        Fx, Fy, dQ, dP = stages[-1]
        w = w0 - c * dt * tr.flux_divergence(Fx, Fy, h)
        Q = Q0 + c * dt * dQ
        P = P0 + c * dt * dP
        stages.append(_rhs(grid, w, Q, P, eps)[:4])

    b = tr.rk4_weights()
    Fx = sum(bi * s[0] for bi, s in zip(b, stages))
    Fy = sum(bi * s[1] for bi, s in zip(b, stages))
    if limit and tr.is_nonnegative(w0):
        Fx, Fy = tr.limit_outflow(w0, Fx, Fy, dt, h)
    w_new = w0 - dt * tr.flux_divergence(Fx, Fy, h)
    Q_new = Q0 + dt * sum(bi * s[2] for bi, s in zip(b, stages))
    P_new = P0 + dt * sum(bi * s[3] for bi, s in zip(b, stages))
    if len(Q_new) > 1:
        _pair_forces(Q_new, grid.L)  # collision check on the new configuration
    return replace(
        state,
        omega=GridField(grid, w_new),
        particles=ParticleEnsemble(Q_new, P_new),
        t=state.t + dt,
    )


def total_vorticity(state: MicroState) -> float:
    return integrate(state.omega)
