import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gyrospray.biot_savart import green_kernel, particle_velocity_contribution, perp
from gyrospray.errors import CFLError, CollisionError
from gyrospray.field import Grid, GridField, cell_average_green, interpolate
from gyrospray.micro import (
    MicroState,
    ParticleEnsemble,
    fluid_velocity,
    microscopic_energy,
    particle_forces,
    step_micro,
    total_vorticity,
)
from gyrospray.profiles import make_profile


def state(grid, Q, P, omega=None, eps=None):
    omega = grid.zeros() if omega is None else omega
    return MicroState(omega, ParticleEnsemble(np.reshape(Q, (-1, 2)), np.reshape(P, (-1, 2))), 0.0, eps)


def run(s, dt, steps):
    for _ in range(steps):
        s = step_micro(s, dt)
    return s


def corotating_pair(d):
    """Relative equilibrium of two particles at distance d with omega = 0."""
    r = d / 2
    c = 1 / (2 * np.pi * d ** 2)  # repulsion over radius
    Om = (1 + np.sqrt(1 - 4 * c)) / 2
    Q = [[r, 0.0], [-r, 0.0]]
    P = [[0.0, r * Om], [0.0, -r * Om]]
    return Q, P, Om


@pytest.fixture
def wide():
    return Grid(4.0, 32)


class TestForces:
    def test_single_particle_gyroscopic(self, wide):
        F = particle_forces(state(wide, [0.0, 0.0], [1.0, 0.0]))
        assert np.allclose(F, [[0.0, 1.0]], atol=1e-15)

    def test_pair_coulomb(self, wide):
        F = particle_forces(state(wide, [[0, 0], [1, 0]], np.zeros((2, 2))))
        assert np.allclose(F[0], (-1 / (4 * np.pi), 0.0), atol=1e-15)
        assert np.allclose(F[0], -F[1], atol=1e-15)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
    def test_pair_parts_cancel(self, seed, N):
        g = Grid(4.0, 32)
        rng = np.random.default_rng(seed)
        Q = rng.uniform(-2.5, 2.5, (N, 2))
        F = particle_forces(state(g, Q, np.zeros((N, 2))))
        assert np.allclose(F.sum(axis=0), 0.0, atol=1e-10 * (1 + np.abs(F).max()))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_relabelling(self, seed):
        g = Grid(4.0, 32)
        rng = np.random.default_rng(seed)
        Q, P = rng.uniform(-2, 2, (6, 2)), rng.normal(size=(6, 2))
        omega = make_profile(g, "bump", mass=0.5, radius=1.0)
        perm = rng.permutation(6)
        s = state(g, Q, P, omega)
        sp = MicroState(omega, s.particles.permuted(perm))
        assert np.allclose(particle_forces(sp), particle_forces(s)[perm], rtol=1e-12, atol=1e-14)
        assert microscopic_energy(sp).total == pytest.approx(microscopic_energy(s).total, rel=1e-12)

    def test_collision(self, wide):
        with pytest.raises(CollisionError):
            particle_forces(state(wide, [[0.1, 0.1], [0.1, 0.1 + 1e-12]], np.zeros((2, 2))))


class TestFluidVelocity:
    def test_zero(self, grid64):
        s = MicroState(grid64.zeros(), ParticleEnsemble(np.zeros((0, 2)), np.zeros((0, 2))))
        assert np.all(fluid_velocity(s).values == 0.0)

    def test_single_particle_far_field(self):
        g = Grid(2.0, 128)
        s = state(g, [0.1, -0.2], [0.0, 0.0])
        x = np.array([[1.3, 0.4], [-1.0, 1.1], [0.0, -1.5]])
        V = interpolate(fluid_velocity(s), x, order=3)
        exact = particle_velocity_contribution([[0.1, -0.2]], [1.0], x, s.eps)
        r2 = np.sum((x - [0.1, -0.2]) ** 2, axis=1)
        assert np.all(np.linalg.norm(V - exact, axis=1) <= np.linalg.norm(exact, axis=1) * (1e-3 + s.eps ** 2 / r2))

    def test_superposition(self):
        g = Grid(2.0, 64)
        omega = make_profile(g, "annulus", mass=1.0, inner=0.6, outer=1.0)
        Q = np.array([[0.1, 0.2], [-0.2, 0.0]])
        P = np.zeros((2, 2))
        both = fluid_velocity(state(g, Q, P, omega)).values
        grid_only = fluid_velocity(state(g, np.zeros((0, 2)), np.zeros((0, 2)), omega)).values
        parts_only = fluid_velocity(state(g, Q, P)).values
        assert np.allclose(both, grid_only + parts_only, atol=1e-14)


class TestStep:
    def test_single_particle_returns_after_full_turn(self, wide):
        steps = 6284
        s = run(state(wide, [0.0, 0.0], [1.0, 0.0]), 2 * np.pi / steps, steps)
        assert np.allclose(s.particles.P[0], (1.0, 0.0), atol=1e-6)
        assert np.allclose(s.particles.Q[0], (0.0, 0.0), atol=1e-6)

    def test_rk4_order(self, wide):
        def err(dt):
            s = run(state(wide, [0.0, 0.0], [1.0, 0.0]), dt, int(round(1 / dt)))
            exact = np.array([np.sin(1.0), 1 - np.cos(1.0)])
            return np.linalg.norm(s.particles.Q[0] - exact)
        e1, e2 = err(0.05), err(0.025)
        assert 12 < e1 / e2 < 20

    def test_corotating_pair_keeps_distance(self):
        g = Grid(2.0, 32)
        Q, P, Om = corotating_pair(1.0)
        period = 2 * np.pi / Om
        steps = int(np.ceil(period / 2e-3))
        s = state(g, Q, P)
        dmax = 0.0
        for _ in range(steps):
            s = step_micro(s, period / steps)
            dmax = max(dmax, abs(np.linalg.norm(s.particles.Q[0] - s.particles.Q[1]) - 1.0))
        assert dmax < 1e-4

    def test_mass_and_positivity(self):
        g = Grid(2.0, 64)
        omega = make_profile(g, "annulus", mass=1.0, inner=0.5, outer=0.9)
        rng = np.random.default_rng(3)
        Q = rng.uniform(-0.3, 0.3, (8, 2))
        s = state(g, Q, 0.1 * rng.normal(size=(8, 2)), omega)
        m0 = total_vorticity(s)
        s = run(s, 5e-3, 40)
        assert abs(total_vorticity(s) - m0) <= 1e-8 * abs(m0)
        assert s.omega.values.min() >= -1e-10 * s.omega.values.max()
        assert s.t == pytest.approx(0.2)

    def test_energy_nearly_conserved(self):
        g = Grid(2.0, 64)
        omega = make_profile(g, "annulus", mass=1.0, inner=0.5, outer=0.9)
        rng = np.random.default_rng(4)
        s = state(g, rng.uniform(-0.3, 0.3, (8, 2)), 0.1 * rng.normal(size=(8, 2)), omega)
        e0 = microscopic_energy(s).total
        s = run(s, 2.5e-3, 40)
        assert abs(microscopic_energy(s).total - e0) / (1 + abs(e0)) < 1e-4

    def test_cfl(self, wide):
        with pytest.raises(CFLError):
            step_micro(state(wide, [0.0, 0.0], [1.0, 0.0]), 1.0)

    def test_collision_aborts_step(self, wide):
        s = state(wide, [[0.0, 0.0], [1e-11, 0.0]], [[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(CollisionError):
            step_micro(s, 1e-3)


class TestEnergy:
    def test_unit_distance_at_rest(self, wide):
        e = microscopic_energy(state(wide, [[0, 0], [0.6, 0.8]], np.zeros((2, 2))))
        assert e.total == pytest.approx(0.0, abs=1e-16)

    def test_kinetic_only(self, wide):
        e = microscopic_energy(state(wide, [[0, 0], [1, 0]], [[1, 0], [0, -1]]))
        assert e.total == pytest.approx(1.0, abs=1e-15)
        assert e.kinetic == 1.0

    def test_pair_energy_value(self, wide):
        Q = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.25]])
        e = microscopic_energy(state(wide, Q, np.zeros((3, 2))))
        ref = sum(green_kernel(Q[i] - Q[j]) for i in range(3) for j in range(3) if i != j) / 9
        assert e.interaction == pytest.approx(ref, rel=1e-13)

    def test_bump_self_energy_matches_direct_sum(self):
        g = Grid(2.0, 64)
        omega = make_profile(g, "bump", mass=1.0, radius=0.8)
        X, Y = g.mesh()
        m = omega.values > 0
        x, y, w = X[m], Y[m], omega.values[m] * g.h ** 2
        d = np.hypot(x[:, None] - x[None], y[:, None] - y[None])
        np.fill_diagonal(d, 1.0)
        G = -np.log(d) / (2 * np.pi)
        np.fill_diagonal(G, cell_average_green(g.h))
        ref = w @ G @ w
        e = microscopic_energy(MicroState(omega, ParticleEnsemble(np.zeros((0, 2)), np.zeros((0, 2)))))
        assert abs(e.interaction - ref) < 1e-3
        assert e.kinetic == 0.0

    def test_cross_term_uses_spline(self):
        g = Grid(2.0, 64)
        omega = make_profile(g, "bump", mass=1.0, radius=0.5)
        q = np.array([[1.2, 0.3]])
        e = microscopic_energy(state(g, q, np.zeros((1, 2)), omega))
        self_part = microscopic_energy(state(g, np.zeros((0, 2)), np.zeros((0, 2)), omega)).interaction
        # outside a radial bump g * omega is exactly the point potential
        assert e.interaction - self_part == pytest.approx(2 * green_kernel(q[0]), rel=2e-3)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ParticleEnsemble([[np.nan, 0.0]], [[0.0, 0.0]])
    p = ParticleEnsemble([[1.0, 2.0]], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        p.Q[0, 0] = 3.0
    assert np.array_equal(perp(p.Q), [[-2.0, 1.0]])


def test_state_requires_scalar_vorticity(grid64):
    with pytest.raises(ValueError):
        MicroState(grid64.zeros(2), ParticleEnsemble(np.zeros((0, 2)), np.zeros((0, 2))))
    assert MicroState(grid64.zeros(), ParticleEnsemble(np.zeros((0, 2)), np.zeros((0, 2)))).eps == 2 * grid64.h
