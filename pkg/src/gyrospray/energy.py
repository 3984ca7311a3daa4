"""Modulated energy between a particle system and the spray, its time derivative,
and the weak-distance diagnostics it controls.

With alpha = w + rho and alpha_N = w_N + rho_N, rho_N = (1/N) sum delta_{q_i}:

    H_N = (1/N) sum |v(q_i) - p_i|^2                  T1
        + double integral off the diagonal of g d(alpha - alpha_N)^2
                                                      T2 + T3 + T4
        + ||w - w_N||^2                               T5
        + B_N / N + ln N / (2N)                       T6

T2 is the micro self-interaction, T3 the macro self-interaction, T4 the
cross term.  Empirical measures are normalized to total weight one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._pairs import pair_energy, pair_rate
from .biot_savart import perp_field
from .errors import CollisionError, GridMismatchError
from .field import CubicInterpolant, GridField, check_support, gradient
from .macro import MacroState, macro_velocity, stream_function
from .micro import MicroState, fluid_velocity

log = logging.getLogger(__name__)

ENERGY_COLUMNS = ("t", "T1", "T2", "T3", "T4", "T5", "T6", "H", "R1", "R2", "R3", "H_rate_fd")


# ---------------------------------------------------------------------------
# Coulomb double integral with the diagonal removed.


def _atoms(Q, w):
    Q = np.ascontiguousarray(np.asarray(Q, dtype=float).reshape(-1, 2))
    w = np.broadcast_to(np.asarray(w, dtype=float), (len(Q),)).copy()
    return Q, w


def _pair_energy(Q, w) -> float:
    if len(Q) < 2:
        return 0.0
    e, dmin = pair_energy(Q, w)
    if dmin == 0.0:
        raise CollisionError("coincident atoms in the Coulomb double integral")
    return float(e)


def coulomb_double_integral(mu: GridField, Q=(), w=()) -> float:
    """Off-diagonal double integral of g against (mu - sum_k w_k delta_{x_k})^2.

    The grid part uses the cell-averaged Green table, the cross term a bicubic
    interpolant of g * mu, and the atomic part exact pair sums.
    """
    check_support(mu)
    grid = mu.grid
    Q, w = _atoms(Q, w)
    psi = stream_function(grid, mu.values)
    total = grid.h ** 2 * float(np.sum(psi * mu.values))
    if len(Q):
        total -= 2.0 * float(np.dot(w, CubicInterpolant(GridField(grid, psi))(Q)))
        total += _pair_energy(Q, w)
    return total


# ---------------------------------------------------------------------------
# Modulated energy.


@dataclass(frozen=True)
class BNPolicy:
    """B_N = c0 (1 + ||rho + w - w_N||_inf), with c0 doubled until the
    Coulomb block plus T6 is nonnegative (when `escalate` is set).

    B_N is meant to be a constant along a run.  `reference_sup` freezes the
    sup norm (use `frozen_at` on the initial states); when it is None the
    current sup norm is used, which makes T6 time dependent.
    """

    c0: float = 1.0
    escalate: bool = True
    factor: float = 2.0
    max_escalations: int = 60
    reference_sup: float | None = None

    def frozen_at(self, macro: MacroState, micro: MicroState) -> "BNPolicy":
        return replace(self, reference_sup=_gap_sup(macro, micro))


def _gap_sup(macro: MacroState, micro: MicroState) -> float:
    return float(np.max(np.abs(macro.omega.values + macro.rho.values - micro.omega.values)))


@dataclass(frozen=True)
class EnergyBreakdown:
    t: float
    T1: float
    T2: float
    T3: float
    T4: float
    T5: float
    T6: float
    H: float
    R1: float = math.nan
    R2: float = math.nan
    R3: float = math.nan
    H_rate_fd: float = math.nan
    c0: float = field(default=1.0, compare=False)

    @property
    def coulomb(self) -> float:
        return self.T2 + self.T3 + self.T4

    @property
    def rate(self) -> float:
        return self.R1 + self.R2 + self.R3

    def resum(self) -> float:
        return math.fsum([self.T1, self.T2, self.T3, self.T4, self.T5, self.T6])

    def with_rates(self, R1, R2, R3) -> "EnergyBreakdown":
        return replace(self, R1=float(R1), R2=float(R2), R3=float(R3))

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ENERGY_COLUMNS}


def _check_pair(macro: MacroState, micro: MicroState, dt: float | None):
    if macro.grid != micro.grid:
        raise GridMismatchError("micro and macro states live on different grids")
    tol = 0.5 * dt if dt is not None else 1e-9 * max(1.0, abs(macro.t))
    if abs(macro.t - micro.t) > tol:
        raise GridMismatchError(f"time mismatch: macro t={macro.t}, micro t={micro.t}")


def bookkeeping_term(N: int, B_N: float) -> float:
    if N == 0:
        return 0.0
    return B_N / N + math.log(N) / (2.0 * N)


def modulated_energy(macro: MacroState, micro: MicroState, policy: BNPolicy = BNPolicy(),
                     dt: float | None = None) -> EnergyBreakdown:
    _check_pair(macro, micro, dt)
    grid = macro.grid
    h2 = grid.h ** 2
    Q, P = np.asarray(micro.particles.Q), np.asarray(micro.particles.P)
    N = len(Q)
    w, wN = macro.omega.values, micro.omega.values
    alpha = w + macro.rho.values
    for f in (micro.omega, macro.omega, macro.rho):
        check_support(f)

    psi_N = stream_function(grid, wN)
    psi_a = stream_function(grid, alpha)
    T1 = 0.0
    T2 = h2 * float(np.sum(psi_N * wN))
    T3 = h2 * float(np.sum(psi_a * alpha))
    T4 = -2.0 * h2 * float(np.sum(psi_a * wN))
    if N:
        vq = CubicInterpolant(macro.v)(Q)
        T1 = float(np.sum((vq - P) ** 2)) / N
        T2 += 2.0 / N * float(np.sum(CubicInterpolant(GridField(grid, psi_N))(Q)))
        T2 += _pair_energy(*_atoms(Q, 1.0 / N))
        T4 -= 2.0 / N * float(np.sum(CubicInterpolant(GridField(grid, psi_a))(Q)))
    T5 = h2 * float(np.sum((w - wN) ** 2))

    sup = float(np.max(np.abs(alpha - wN))) if policy.reference_sup is None else policy.reference_sup
    c0 = policy.c0
    T6 = bookkeeping_term(N, c0 * (1.0 + sup))
    if N and policy.escalate:
        k = 0
        while T2 + T3 + T4 + T6 < 0.0 and k < policy.max_escalations:
            c0 *= policy.factor
            T6 = bookkeeping_term(N, c0 * (1.0 + sup))
            k += 1
        if k:
            log.warning("B_N surrogate escalated: c0 %.6g -> %.6g (N=%d, t=%.6g)", policy.c0, c0, N, macro.t)
    H = math.fsum([T1, T2, T3, T4, T5, T6])
    return EnergyBreakdown(macro.t, T1, T2, T3, T4, T5, T6, H, c0=c0)


# ---------------------------------------------------------------------------
# Analytic rate.


class RateTerms(NamedTuple):
    R1: float
    R2: float
    R3: float


def energy_rate(macro: MacroState, micro: MicroState, dt: float | None = None) -> RateTerms:
    """R1 + R2 + R3, the time derivative of H_N along the coupled dynamics."""
    _check_pair(macro, micro, dt)
    grid = macro.grid
    h, h2 = grid.h, grid.h ** 2
    Q, P = np.asarray(micro.particles.Q), np.asarray(micro.particles.P)
    N = len(Q)
    v = macro.v.values
    wgap = macro.omega.values - micro.omega.values
    mu = wgap + macro.rho.values  # grid part of alpha - alpha_N

    # R2, grid-grid part: 2 int mu v . grad(g * mu)
    psi = stream_function(grid, mu)
    R2 = 2.0 * h2 * float(np.sum(mu * np.einsum("cij,cij->ij", v, gradient(psi, h))))

    R1 = 0.0
    if N:
        vspl = CubicInterpolant(macro.v)
        vq = vspl(Q)
        Dv = vspl.gradient(Q)  # [i, a, b] = d_a v_b
        gap = vq - P
        R1 = -2.0 / N * float(np.einsum("ia,iab,ib->", gap, Dv, gap))

        # cross part: -(2/N) sum_i [ -div(g * (v mu))(q_i) + v(q_i) . grad(g * mu)(q_i) ]
        grad_psi = CubicInterpolant(GridField(grid, psi)).gradient(Q)
        D = np.zeros(N)
        for c in (0, 1):
            s = CubicInterpolant(GridField(grid, stream_function(grid, v[c] * mu)))
            D += s(Q, dx=1 - c, dy=c)
        R2 -= 2.0 / N * float(np.sum(-D + np.einsum("ic,ic->i", vq, grad_psi)))

        if N > 1:
            R2 += float(pair_rate(np.ascontiguousarray(Q), np.ascontiguousarray(vq), np.full(N, 1.0 / N)))

    V = macro_velocity(macro).values
    VN = fluid_velocity(micro).values
    A = 2.0 * (perp_field(v) - perp_field(V) - gradient(macro.omega.values, h))
    R3 = h2 * float(np.sum(np.einsum("cij,cij->ij", A, V - VN) * wgap))
    return RateTerms(R1, R2, R3)


# ---------------------------------------------------------------------------
# Weak distances.


def _half_lattice(K: int, dim: int) -> np.ndarray:
    """Integer vectors with |m| <= K, one of each +-m pair (plus zero)."""
    r = np.arange(-K, K + 1)
    m = np.stack(np.meshgrid(*([r] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    m = m[np.sum(m * m, axis=1) <= K * K]
    nz = m != 0
    first = np.where(nz.any(axis=1), m[np.arange(len(m)), np.argmax(nz, axis=1)], 1)
    return m[first > 0]


def _fourier_sums(points: np.ndarray, weights: np.ndarray, k: np.ndarray, chunk: int = 256) -> np.ndarray:
    """sum_j w_j exp(i k . z_j) for every row of k."""
    out = np.empty(len(k), dtype=complex)
    for s in range(0, len(k), chunk):
        phase = points @ k[s:s + chunk].T
        out[s:s + chunk] = weights @ np.exp(1j * phase)
    return out


def dictionary_distance(points_a, weights_a, points_b, weights_b, L: float, K: int, s: float = 5.0) -> float:
    """max over Fourier modes phi_k(z) = exp(i k.z), k = pi m / L, |m| <= K, of
    |<phi_k, a - b>| / ||phi_k||_{H^s([-L, L]^d)}."""
    points_a = np.asarray(points_a, dtype=float)
    points_b = np.asarray(points_b, dtype=float)
    dim = points_a.shape[1] if points_a.size else points_b.shape[1]
    k = np.pi / L * _half_lattice(K, dim)
    diff = np.zeros(len(k), dtype=complex)
    if len(points_a):
        diff += _fourier_sums(points_a, np.asarray(weights_a, dtype=float), k)
    if len(points_b):
        diff -= _fourier_sums(points_b, np.asarray(weights_b, dtype=float), k)
    norms = math.sqrt((2.0 * L) ** dim) * (1.0 + np.sum(k * k, axis=1)) ** (s / 2.0)
    return float(np.max(np.abs(diff) / norms))


def _monokinetic_points(macro: MacroState):
    """Quadrature nodes (x, v(x)) and weights h^2 rho(x) of rho (x) delta_{xi = v(x)}."""
    grid = macro.grid
    rho = macro.rho.values
    mask = rho != 0.0
    X, Y = grid.mesh()
    pts = np.column_stack([X[mask], Y[mask], macro.v.values[0][mask], macro.v.values[1][mask]])
    return pts, grid.h ** 2 * rho[mask]


def negative_sobolev_gap(mu: GridField, Q=(), w=(), s: float = -2.0, M: int = 32) -> float:
    """Box H^s norm of mu - sum_k w_k delta_{x_k}, truncated to |m_j| <= M.

    Coefficients are exact for the atoms and Riemann sums for mu; the
    normalization matches the grid Sobolev norm (s = 0 is the L2 norm).
    """
    grid = mu.grid
    L = grid.L
    m = np.arange(-M, M + 1)
    k = np.pi / L * m
    E = np.exp(-1j * np.outer(k, grid.centers))  # (2M+1, n)
    c = grid.h ** 2 * (E @ mu.values @ E.T)
    Q, w = _atoms(Q, w)
    if len(Q):
        ax = np.exp(-1j * np.outer(Q[:, 0], k)) * w[:, None]
        ay = np.exp(-1j * np.outer(Q[:, 1], k))
        c -= ax.T @ ay
    K2 = k[:, None] ** 2 + k[None, :] ** 2
    return float(np.sqrt(np.sum((1.0 + K2) ** s * np.abs(c) ** 2) / (2.0 * L) ** 2))


class CoercivityReport(NamedTuple):
    t: float
    dict_distance: float
    l2_omega_gap: float
    weak_rho_gap: float


def coercivity_report(macro: MacroState, micro: MicroState, K: int = 4) -> CoercivityReport:
    """Dictionary lower bound for the phase-space distance between
    (1/N) sum delta_{(q_i, p_i)} and rho (x) delta_{xi = v(x)}."""
    if not 0 <= K <= 8:
        raise ValueError("mode cutoff K must lie in [0, 8]")
    if macro.grid != micro.grid:
        raise GridMismatchError("micro and macro states live on different grids")
    grid = macro.grid
    N = micro.N
    Z = np.hstack([micro.particles.Q, micro.particles.P]) if N else np.zeros((0, 4))
    pts, wts = _monokinetic_points(macro)
    dist = dictionary_distance(Z, np.full(N, 1.0 / max(N, 1)), pts, wts, grid.L, K)
    l2 = float(np.sqrt(grid.h ** 2 * np.sum((macro.omega.values - micro.omega.values) ** 2)))
    weak = negative_sobolev_gap(macro.rho, micro.particles.Q, 1.0 / max(N, 1))
    return CoercivityReport(macro.t, dist, l2, weak)


class WellPreparedness(NamedTuple):
    l2_omega_gap: float
    weak_rho_gap: float
    pair_energy_gap: float
    coulomb_block: float


def well_preparedness_check(micro0: MicroState, macro0: MacroState, K: int = 4) -> WellPreparedness:
    """Initial-data diagnostics: vorticity L2 gap, dictionary distance of the
    empirical measure to rho_0, and the pair-energy discrepancy."""
    if macro0.grid != micro0.grid:
        raise GridMismatchError("micro and macro states live on different grids")
    grid = macro0.grid
    Q = np.asarray(micro0.particles.Q)
    N = len(Q)
    w = 1.0 / N if N else 0.0
    l2 = float(np.sqrt(grid.h ** 2 * np.sum((macro0.omega.values - micro0.omega.values) ** 2)))
    X, Y = grid.mesh()
    rho = macro0.rho.values
    mask = rho != 0.0
    weak = dictionary_distance(Q, np.full(N, w), np.column_stack([X[mask], Y[mask]]),
                               grid.h ** 2 * rho[mask], grid.L, K) if (N or mask.any()) else 0.0
    psi = stream_function(grid, rho)
    smooth = grid.h ** 2 * float(np.sum(psi * rho))
    discrete = _pair_energy(*_atoms(Q, w)) if N else 0.0
    mu = macro0.rho + macro0.omega - micro0.omega
    block = coulomb_double_integral(mu, Q, w) if N else coulomb_double_integral(mu)
    return WellPreparedness(l2, weak, abs(discrete - smooth), block)
