import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as spi

from gyrospray.errors import OutOfBoxError, SupportError
from gyrospray.field import (
    CubicInterpolant,
    Grid,
    GridField,
    cell_average_green,
    check_support,
    integrate,
    interpolate,
    l2_norm,
    poisson_green_convolve,
    read_snapshot,
    sobolev_norm,
    support_radius,
    write_snapshot,
)
from gyrospray.profiles import make_profile


def brute_force_psi(mu: GridField, points) -> np.ndarray:
    """g * mu at arbitrary points by direct summation (midpoint rule per cell)."""
    g = mu.grid
    X, Y = g.mesh()
    mask = mu.values != 0
    xs, ys, w = X[mask], Y[mask], mu.values[mask] * g.h ** 2
    pts = np.atleast_2d(points)
    r = np.hypot(pts[:, 0:1] - xs[None], pts[:, 1:2] - ys[None])
    return -(np.log(r) * w[None]).sum(axis=1) / (2 * np.pi)


class TestGrid:
    def test_spacing(self):
        g = Grid(2.0, 32)
        assert g.h * g.n == pytest.approx(4.0, abs=0)

    @pytest.mark.parametrize("n", [8, 48, 100, 0])
    def test_rejects_bad_resolution(self, n):
        with pytest.raises(ValueError):
            Grid(1.0, n)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            Grid(-1.0, 32)


class TestGridField:
    def test_shape_and_finiteness(self, grid64):
        with pytest.raises(ValueError):
            GridField(grid64, np.zeros((3, 3)))
        bad = np.zeros((64, 64))
        bad[3, 3] = np.nan
        with pytest.raises(ValueError):
            GridField(grid64, bad)

    def test_immutable(self, grid64):
        f = grid64.zeros()
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    def test_arithmetic_requires_same_grid(self, grid64):
        with pytest.raises(ValueError):
            grid64.zeros() + Grid(2.0, 32).zeros()

    def test_vector_components(self, grid64):
        v = grid64.zeros(2)
        assert v.components == 2 and not v.is_scalar


class TestIntegrate:
    def test_zero(self, grid64):
        assert integrate(grid64.zeros()) == 0.0

    def test_constant(self):
        g = Grid(2.0, 32)
        assert integrate(GridField(g, np.ones((32, 32)))) == pytest.approx(16.0, rel=1e-15)

    def test_disk_area(self):
        g = Grid(2.0, 256)
        assert abs(integrate(make_profile(g, "disk", radius=1.0)) - np.pi) < 5e-2

    def test_rejects_vectors(self, grid64):
        with pytest.raises(ValueError):
            integrate(grid64.zeros(2))

    @given(st.integers(-5, 5), st.integers(-5, 5))
    def test_whole_cell_translation(self, a, b):
        g = Grid(2.0, 32)
        base = make_profile(g, "bump", radius=0.5).values
        shifted = np.roll(np.roll(base, a, axis=0), b, axis=1)
        assert integrate(GridField(g, shifted)) == pytest.approx(integrate(GridField(g, base)), rel=1e-13)


def test_cell_average_green_matches_quadrature():
    h = 0.37
    val, _ = spi.dblquad(lambda y, x: -np.log(np.hypot(x, y)) / (2 * np.pi),
                         0, h / 2, 0, h / 2, epsabs=1e-14)
    # one quadrant keeps the log singularity on a corner, away from the nodes
    assert cell_average_green(h) == pytest.approx(4 * val / h ** 2, rel=1e-9)


class TestPoisson:
    def test_zero(self, grid64):
        assert np.all(poisson_green_convolve(grid64.zeros()).values == 0.0)

    def test_matches_direct_sum(self):
        g = Grid(1.0, 32)
        mu = make_profile(g, "bump", mass=1.0, radius=0.4, center=(0.05, -0.1))
        psi = poisson_green_convolve(mu)
        X, Y = g.mesh()
        # direct sum with the cell-averaged kernel on the diagonal
        pts = np.column_stack([X.ravel(), Y.ravel()])
        w = mu.values.ravel() * g.h ** 2
        d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
        np.fill_diagonal(d, 1.0)
        G = -np.log(d) / (2 * np.pi)
        np.fill_diagonal(G, cell_average_green(g.h))
        ref = (G @ w).reshape(32, 32)
        assert np.max(np.abs(psi.values - ref)) < 1e-12

    def test_newton_theorem_outside_radial_bump(self):
        g = Grid(2.0, 512)
        mu = make_profile(g, "bump", mass=1.0, radius=0.6)
        psi = poisson_green_convolve(mu)
        ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        r = np.array([0.7, 0.8, 0.9, 0.75, 0.85, 0.95, 0.72, 0.88])
        pts = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        vals = interpolate(psi, pts, order=3)
        assert np.max(np.abs(vals + np.log(r) / (2 * np.pi))) < 1e-3
        assert np.max(np.abs(vals - brute_force_psi(mu, pts))) < 1e-3

    def test_disk_centre_value(self):
        g = Grid(2.0, 256)
        mu = make_profile(g, "disk", mass=1.0, radius=1.0)
        psi = poisson_green_convolve(mu)
        # exact: psi(0) = 1/(4 pi) for the unit disk of mass 1; the sampled disk
        # differs by O(h), so compare to a direct sum over the same cells
        c = interpolate(psi, (0.0, 0.0), order=3)
        ref = brute_force_psi(mu, [[g.h / 3, g.h / 5]])[0]
        assert abs(c - ref) < 1e-3
        assert abs(c - 1 / (4 * np.pi)) < 1e-2

    def test_discrete_laplacian(self):
        errs = []
        for n in (64, 128):
            g = Grid(2.0, n)
            mu = make_profile(g, "gaussian", width=0.3, cutoff=1.0)
            p = poisson_green_convolve(mu).values
            lap = (np.roll(p, 1, 0) + np.roll(p, -1, 0) + np.roll(p, 1, 1) + np.roll(p, -1, 1) - 4 * p) / g.h ** 2
            inner = g.radius() < 0.9
            errs.append(np.max(np.abs(-lap - mu.values)[inner]))
        assert errs[1] < errs[0] / 3.0

    def test_support_violation(self, grid64):
        v = np.zeros((64, 64))
        v[0, 30] = 1.0
        with pytest.raises(SupportError):
            poisson_green_convolve(GridField(grid64, v))
        with pytest.raises(SupportError):
            check_support(GridField(grid64, v))

    @given(st.floats(-3, 3), st.integers(0, 2 ** 32 - 1))
    def test_linearity(self, a, seed):
        g = Grid(1.0, 32)
        rng = np.random.default_rng(seed)
        mask = g.radius() < 0.4
        m1 = GridField(g, rng.normal(size=(32, 32)) * mask)
        m2 = GridField(g, rng.normal(size=(32, 32)) * mask)
        lhs = poisson_green_convolve(m1 * a + m2).values
        rhs = a * poisson_green_convolve(m1).values + poisson_green_convolve(m2).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


class TestSobolev:
    def test_zero(self, grid64):
        assert sobolev_norm(grid64.zeros(), 1.5) == 0.0

    def test_s0_is_l2(self, grid64, rng):
        f = GridField(grid64, rng.normal(size=(64, 64)))
        assert sobolev_norm(f, 0.0) == pytest.approx(l2_norm(f), rel=1e-12)

    @pytest.mark.parametrize("s", [-2.0, 0.0, 1.0, 3.0])
    def test_single_mode(self, s):
        g = Grid(2.0, 64)
        a, m = 0.7, (3, 5)
        k = np.pi * np.array(m) / g.L
        X, Y = g.mesh()
        f = g.scalar(a * np.cos(k[0] * X + k[1] * Y))
        # a real cosine splits its amplitude between +k and -k
        expected = a * 2 * g.L / np.sqrt(2) * (1 + k @ k) ** (s / 2)
        assert sobolev_norm(f, s) == pytest.approx(expected, rel=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(-6, 6), st.floats(-6, 6))
    def test_monotone_in_s(self, seed, s1, s2):
        g = Grid(1.0, 16)
        f = GridField(g, np.random.default_rng(seed).normal(size=(16, 16)))
        lo, hi = sorted((s1, s2))
        assert sobolev_norm(f, lo) <= sobolev_norm(f, hi) * (1 + 1e-12)

    def test_range(self, grid64):
        with pytest.raises(ValueError):
            sobolev_norm(grid64.zeros(), 7.0)


class TestInterpolate:
    def test_constant(self, grid64):
        f = GridField(grid64, np.full((64, 64), 2.5))
        assert interpolate(f, (0.123, -1.9)) == pytest.approx(2.5, abs=1e-14)

    def test_linear_exact(self, grid64):
        X, Y = grid64.mesh()
        f = grid64.scalar(X)
        assert abs(interpolate(f, (0.3, -0.7)) - 0.3) < 1e-12
        g = grid64.scalar(2 * X - Y + 0.5 * X * Y)
        pts = np.random.default_rng(0).uniform(-1.99, 1.99, (50, 2))
        exact = 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
        assert np.max(np.abs(interpolate(g, pts) - exact)) < 1e-12

    def test_gaussian_second_order(self, rng):
        pts = rng.uniform(-1, 1, (40, 2))
        errs = []
        for n in (32, 64, 128):
            g = Grid(2.0, n)
            X, Y = g.mesh()
            f = g.scalar(np.exp(-(X ** 2 + Y ** 2)))
            exact = np.exp(-np.sum(pts ** 2, axis=1))
            errs.append(np.max(np.abs(interpolate(f, pts) - exact)))
            assert errs[-1] < 0.5 * g.h ** 2
        assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0

    def test_cubic_and_derivatives(self, grid64, rng):
        X, Y = grid64.mesh()
        f = grid64.scalar(np.sin(X) * np.cos(Y))
        pts = rng.uniform(-1.5, 1.5, (30, 2))
        s = CubicInterpolant(f)
        assert np.max(np.abs(s(pts) - np.sin(pts[:, 0]) * np.cos(pts[:, 1]))) < 1e-5
        grad = s.gradient(pts)
        assert np.max(np.abs(grad[:, 0] - np.cos(pts[:, 0]) * np.cos(pts[:, 1]))) < 1e-4
        assert np.max(np.abs(grad[:, 1] + np.sin(pts[:, 0]) * np.sin(pts[:, 1]))) < 1e-4

    def test_vector_field(self, grid64):
        X, Y = grid64.mesh()
        v = GridField(grid64, np.stack([X, 3 * Y]))
        assert np.allclose(interpolate(v, (0.5, 0.25)), [0.5, 0.75], atol=1e-12)

    def test_out_of_box(self, grid64):
        with pytest.raises(OutOfBoxError):
            interpolate(grid64.zeros(), (2.5, 0.0))


class TestSupportRadius:
    def test_zero(self, grid64):
        assert support_radius(grid64.zeros(), 0.0) == 0.0

    def test_disk(self):
        g = Grid(2.0, 128)
        f = make_profile(g, "disk", radius=1.0)
        assert abs(support_radius(f, 0.5) - 1.0) <= g.h * np.sqrt(2)

    def test_negative_threshold(self, grid64):
        with pytest.raises(ValueError):
            support_radius(grid64.zeros(), -1.0)


class TestSnapshot:
    def test_roundtrip_scalar_and_vector(self, tmp_path, grid64, rng):
        for comps in (1, 2):
            shape = (64, 64) if comps == 1 else (2, 64, 64)
            f = GridField(grid64, rng.normal(size=shape))
            p = tmp_path / f"f{comps}.spry"
            write_snapshot(p, f)
            g = read_snapshot(p)
            assert g.grid == f.grid and np.array_equal(g.values, f.values)

    def test_header_layout(self, tmp_path, grid64):
        p = tmp_path / "z.spry"
        write_snapshot(p, grid64.zeros(2))
        raw = p.read_bytes()
        magic, version, L, n, comps = struct.unpack_from("<4sIdII", raw)
        assert (magic, version, L, n, comps) == (b"SPRY", 1, 2.0, 64, 2)
        assert len(raw) == struct.calcsize("<4sIdII") + 8 * 2 * 64 * 64

    def test_corrupt(self, tmp_path, grid64):
        p = tmp_path / "bad.spry"
        write_snapshot(p, grid64.zeros())
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(ValueError):
            read_snapshot(p)
        p.write_bytes(b"SP")
        with pytest.raises(ValueError):
            read_snapshot(p)
