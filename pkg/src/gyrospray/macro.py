"""The monokinetic spray system in primitive variables.

    d_t w + div(w V) = 0
    d_t rho + div(rho v) = 0
    d_t v + (v . grad) v = (v - V)^perp
    V = -perp(grad g) * (w + rho)

w and rho are stepped in flux form; v is stepped pointwise in advective form
on the whole grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import transport as tr
from .biot_savart import perp_field, vbar_field, velocity_from_stream
from .errors import CFLError, NumericalAbort
from .field import (
    Grid,
    GridField,
    check_support,
    gradient,
    green_table_hat,
    integrate,
    l2_norm,
    pad_hat,
    support_radius,
    unpad,
)

GRADIENT_BLOWUP = 1e3


@dataclass(frozen=True)
class MacroState:
    omega: GridField
    rho: GridField
    v: GridField
    t: float = 0.0

    def __post_init__(self):
        if not (self.omega.is_scalar and self.rho.is_scalar):
            raise ValueError("omega and rho must be scalar fields")
        if self.v.components != 2:
            raise ValueError("v must be a vector field")
        if not (self.omega.grid == self.rho.grid == self.v.grid):
            raise ValueError("omega, rho and v must share a grid")

    @property
    def grid(self) -> Grid:
        return self.omega.grid


class MacroTendency(NamedTuple):
    omega: np.ndarray
    rho: np.ndarray
    v: np.ndarray


def stream_function(grid: Grid, density: np.ndarray) -> np.ndarray:
    """g * density on the grid, without the support check."""
    return grid.h ** 2 * unpad(pad_hat(density) * green_table_hat(grid), grid.n)


def macro_velocity(state: MacroState) -> GridField:
    """V = -perp(grad g) * (omega + rho) at cell centres."""
    grid = state.grid
    psi = stream_function(grid, state.omega.values + state.rho.values)
    return GridField(grid, velocity_from_stream(psi, grid.h))


def _fluxes(grid: Grid, w: np.ndarray, r: np.ndarray, v: np.ndarray):
    h = grid.h
    psi = stream_function(grid, w + r)
    uV, vV = tr.face_velocities_from_stream(psi, h)
    Vc = velocity_from_stream(psi, h)
    uv, vv = tr.face_velocities_from_cells(v)
    Fw = tr.fluxes(w, uV, vV)
    Fr = tr.fluxes(r, uv, vv)
    dv = -tr.advective_derivative(v, v, h) + perp_field(v - Vc)
    speed = max(np.max(np.abs(uV)), np.max(np.abs(vV)))
    return Fw, Fr, dv, speed


def macro_rhs(state: MacroState) -> MacroTendency:
    """Time derivatives of (omega, rho, v) at the current state."""
    grid = state.grid
    check_support(state.omega)
    check_support(state.rho)
    (Fx, Fy), (Gx, Gy), dv, _ = _fluxes(grid, state.omega.values, state.rho.values, state.v.values)
    return MacroTendency(
        -tr.flux_divergence(Fx, Fy, grid.h),
        -tr.flux_divergence(Gx, Gy, grid.h),
        dv,
    )


def max_stable_dt(state: MacroState, cfl: float = 0.8) -> float:
    Vmax = macro_velocity(state).max_abs()
    return cfl * state.grid.h / (Vmax + state.v.max_abs() + 1.0)


def _blowup_check(v: np.ndarray, h: float, t: float):
    if not np.all(np.isfinite(v)):
        raise NumericalAbort(f"non-finite velocity at t={t:.6g}")
    gmax = float(np.max(np.abs(gradient(v, h))))
    if gmax > GRADIENT_BLOWUP:
        raise NumericalAbort(f"velocity gradient blow-up (|grad v| = {gmax:.3e}) at t={t:.6g}")


def step_macro(state: MacroState, dt: float, cfl: float = 0.8, limit: bool = True) -> MacroState:
    """One classical RK4 step; omega and rho in flux form, v in advective form."""
    grid, h = state.grid, state.grid.h
    w0, r0, v0 = state.omega.values, state.rho.values, state.v.values
    check_support(state.omega)
    check_support(state.rho)

    Fw, Fr, dv, speed = _fluxes(grid, w0, r0, v0)
    vmax = float(np.max(np.abs(v0)))
    bound = cfl * h / (speed + vmax + 1.0)
    if dt > bound:
        raise CFLError(f"dt={dt} exceeds the CFL limit {bound:.3e}")
    stages = [(Fw, Fr, dv)]
    for c in (0.5, 0.5, 1.0):
        Fw, Fr, dv = stages[-1]
        w = w0 - c * dt * tr.flux_divergence(*Fw, h)
        r = r0 - c * dt * tr.flux_divergence(*Fr, h)
        v = v0 + c * dt * dv
        stages.append(_fluxes(grid, w, r, v)[:3])

    b = tr.rk4_weights()
    Fw = tuple(sum(bi * s[0][k] for bi, s in zip(b, stages)) for k in (0, 1))
    Fr = tuple(sum(bi * s[1][k] for bi, s in zip(b, stages)) for k in (0, 1))
    dv = sum(bi * s[2] for bi, s in zip(b, stages))
    if limit and tr.is_nonnegative(w0):
        Fw = tr.limit_outflow(w0, *Fw, dt, h)
    if limit and tr.is_nonnegative(r0):
        Fr = tr.limit_outflow(r0, *Fr, dt, h)
    w_new = w0 - dt * tr.flux_divergence(*Fw, h)
    r_new = r0 - dt * tr.flux_divergence(*Fr, h)
    v_new = v0 + dt * dv
    _blowup_check(v_new, h, state.t + dt)
    return MacroState(GridField(grid, w_new), GridField(grid, r_new), GridField(grid, v_new), state.t + dt)


def advect(mu: GridField, velocity, dt: float, steps: int) -> GridField:
    """Transport a density by a frozen velocity field (cell-centred, or a constant vector)."""
    grid, h = mu.grid, mu.grid.h
    vel = np.asarray(velocity.values if isinstance(velocity, GridField) else velocity, dtype=float)
    if vel.shape == (2,):
        vel = np.broadcast_to(vel[:, None, None], (2, grid.n, grid.n))
    u, v = tr.face_velocities_from_cells(vel)
    q = mu.values
    for _ in range(steps):
        k = [tr.fluxes(q, u, v)]
        for c in (0.5, 0.5, 1.0):
            k.append(tr.fluxes(q - c * dt * tr.flux_divergence(*k[-1], h), u, v))
        b = tr.rk4_weights()
        Fx = sum(bi * s[0] for bi, s in zip(b, k))
        Fy = sum(bi * s[1] for bi, s in zip(b, k))
        if tr.is_nonnegative(q):
            Fx, Fy = tr.limit_outflow(q, Fx, Fy, dt, h)
        q = q - dt * tr.flux_divergence(Fx, Fy, h)
    return GridField(grid, q)


# ---------------------------------------------------------------------------
# Diagnostics.

SUPPORT_THRESHOLD = 1e-8


def diagnostics(state: MacroState, support_threshold: float = SUPPORT_THRESHOLD) -> dict:
    """Row of the macro diagnostics log.

    Supports are measured at a fixed fraction of each field's current maximum;
    max_V is logged alongside max_v so the omega support bound can be checked.
    """
    def supp(f):
        m = f.max_abs()
        return support_radius(f, support_threshold * m) if m > 0 else 0.0

    return {
        "t": state.t,
        "mass_rho": integrate(state.rho),
        "mass_omega": integrate(state.omega),
        "l2_omega": l2_norm(state.omega),
        "support_rho": supp(state.rho),
        "support_omega": supp(state.omega),
        "max_v": state.v.max_abs(),
        "max_V": macro_velocity(state).max_abs(),
    }


class SupportBoundReport(NamedTuple):
    ok: bool
    margin: float  # smallest slack over the logged times (negative on violation)
    margins: np.ndarray


def check_support_bound(times, radii, speeds, h: float, R0: float | None = None) -> SupportBoundReport:
    """Check R_t <= R_0 + t * max_{s <= t} speed(s) + 2h at every logged time.

    `speeds[k]` is the sup norm of the transporting velocity at `times[k]`.
    """
    times = np.asarray(times, dtype=float)
    radii = np.asarray(radii, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    if not (times.shape == radii.shape == speeds.shape) or times.size == 0:
        raise ValueError("times, radii and speeds must be equal-length and non-empty")
    R0 = radii[0] if R0 is None else float(R0)
    bound = R0 + (times - times[0]) * np.maximum.accumulate(speeds) + 2.0 * h
    margins = bound - radii
    return SupportBoundReport(bool(np.all(margins >= 0.0)), float(np.min(margins)), margins)


class SplittingResidual(NamedTuple):
    u: GridField
    f: GridField
    l2_u: float
    l2_f: float


def splitting_residual(state: MacroState, chi: GridField, mass: float | None = None) -> SplittingResidual:
    """u = v - Vbar and f = (Vbar - V)^perp - (Vbar . grad) Vbar for the far-field split.

    Vbar carries `mass` (default: the total mass of rho + omega) spread by the
    unit-mass cutoff chi.  A mismatch between `mass` and the actual total mass
    is allowed but warned about, since u is then not square integrable.
    """
    grid = state.grid
    total = integrate(state.omega) + integrate(state.rho)
    if mass is None:
        mass = total
    elif abs(total - mass) > 1e-6:
        warnings.warn(
            f"total mass {total:.8g} differs from the far-field mass {mass:.8g}; "
            "the split velocity will not decay in L2",
            RuntimeWarning,
            stacklevel=2,
        )
    Vbar = vbar_field(mass, chi)
    V = macro_velocity(state)
    u = state.v - Vbar
    dV = gradient(Vbar.values, grid.h)  # [a, b] = d_a Vbar_b
    adv = np.einsum("aij,abij->bij", Vbar.values, dV)
    f = GridField(grid, perp_field((Vbar - V).values) - adv)
    return SplittingResidual(u, f, _l2_vec(u), _l2_vec(f))


def _l2_vec(f: GridField) -> float:
    return float(np.sqrt(np.sum(f.values ** 2) * f.grid.h ** 2))


def total_masses(state: MacroState):
    return integrate(state.rho), integrate(state.omega)
