"""Uniform-grid fields on the square [-L, L]^2.

Samples live at cell centres ``x_i = -L + (i + 1/2) h``.  Arrays are indexed
``values[ix, iy]`` (first axis is x), vector fields carry a leading component
axis: ``values[c, ix, iy]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import RectBivariateSpline

from .errors import GridMismatchError, OutOfBoxError, SupportError

TWO_PI = 2.0 * np.pi

SNAPSHOT_MAGIC = b"SPRY"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIdII")


@dataclass(frozen=True)
class Grid:
    L: float
    n: int

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"resolution must be a power of two >= 16, got {self.n}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"half width must be positive, got {self.L}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def centers(self) -> np.ndarray:
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        c = self.centers
        return np.meshgrid(c, c, indexing="ij")

    def radius(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.hypot(X, Y)

    def scalar(self, values) -> "GridField":
        return GridField(self, np.asarray(values, dtype=float))

    def zeros(self, components: int = 1) -> "GridField":
        shape = (self.n, self.n) if components == 1 else (components, self.n, self.n)
        return GridField(self, np.zeros(shape))

    def sample(self, func, components: int = 1) -> "GridField":
        """Evaluate ``func(X, Y)`` at cell centres."""
        X, Y = self.mesh()
        vals = np.asarray(func(X, Y), dtype=float)
        if components == 1:
            vals = np.broadcast_to(vals, X.shape).copy()
        return GridField(self, vals)


class GridField:
    """Immutable scalar (n, n) or 2-vector (2, n, n) samples on a Grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.array(values, dtype=float, copy=True)
        n = grid.n
        if values.shape not in ((n, n), (2, n, n)):
            raise ValueError(f"samples of shape {values.shape} do not fit a {n}x{n} grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("field samples must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 2 else 2

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 2

    def _check(self, other: "GridField"):
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")
        if other.values.shape != self.values.shape:
            raise GridMismatchError("component mismatch")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.grid, self.values + other.values)
        return GridField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.grid, self.values - other.values)
        return GridField(self.grid, self.values - other)

    def __mul__(self, a):
        return GridField(self.grid, self.values * a)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.values)

    def max_abs(self) -> float:
        if self.is_scalar:
            return float(np.max(np.abs(self.values)))
        return float(np.max(np.hypot(self.values[0], self.values[1])))

    def __repr__(self):
        return f"GridField(L={self.grid.L}, n={self.grid.n}, components={self.components})"


def _require_scalar(f: GridField, what: str = "field"):
    if not f.is_scalar:
        raise ValueError(f"{what} must be a scalar field")


def integrate(f: GridField) -> float:
    """Midpoint quadrature h^2 * sum of samples."""
    _require_scalar(f)
    return float(f.grid.h ** 2 * np.sum(f.values))


def l2_norm(f: GridField) -> float:
    return float(np.sqrt(f.grid.h ** 2 * np.sum(f.values ** 2)))


# ---------------------------------------------------------------------------
# Free-space convolution with the log kernel.


def cell_average_green(h: float) -> float:
    """Mean of -ln|x|/(2 pi) over the square of side h centred at the origin."""
    a = 0.5 * h
    mean_log = np.log(a) - 1.5 + np.pi / 4 + 0.5 * np.log(2.0)
    return -mean_log / TWO_PI


def _offsets(grid: Grid):
    # offset index k in [0, 2n) stands for the signed offset k (k < n) or k - 2n
    k = np.arange(2 * grid.n)
    k = np.where(k < grid.n, k, k - 2 * grid.n) * grid.h
    return np.meshgrid(k, k, indexing="ij")


@lru_cache(maxsize=16)
def green_table_hat(grid: Grid) -> np.ndarray:
    """rFFT of the doubled-domain table of g at cell offsets."""
    DX, DY = _offsets(grid)
    r2 = DX ** 2 + DY ** 2
    r2[0, 0] = 1.0
    table = -np.log(r2) / (2.0 * TWO_PI)
    table[0, 0] = cell_average_green(grid.h)
    return sfft.rfft2(table)


@lru_cache(maxsize=16)
def blob_table_hat(grid: Grid, eps: float) -> np.ndarray:
    """rFFT of the regularised kernel -ln(|x|^2 + eps^2) / (4 pi)."""
    DX, DY = _offsets(grid)
    table = -np.log(DX ** 2 + DY ** 2 + eps ** 2) / (2.0 * TWO_PI)
    return sfft.rfft2(table)


def pad_hat(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    padded = np.zeros(a.shape[:-2] + (2 * n, 2 * n))
    padded[..., :n, :n] = a
    return sfft.rfft2(padded)


def unpad(hat: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(hat, s=(2 * n, 2 * n))[..., :n, :n]


def check_support(mu: GridField, band: int = 2, rel_threshold: float = 1e-10):
    """Raise SupportError when mu has non-negligible mass within `band` cells of the edge."""
    a = np.abs(mu.values)
    total = a.sum()
    if total == 0.0:
        return
    inner = a[band:-band, band:-band].sum()
    if total - inner > rel_threshold * total:
        raise SupportError(
            f"field carries a fraction {(total - inner) / total:.3e} of its mass "
            f"within {band} cells of the box boundary"
        )


def poisson_green_convolve(mu: GridField, *, check: bool = True) -> GridField:
    """psi = g * mu on the box, computed aperiodically by domain doubling."""
    _require_scalar(mu, "mu")
    if check:
        check_support(mu)
    grid = mu.grid
    psi = grid.h ** 2 * unpad(pad_hat(mu.values) * green_table_hat(grid), grid.n)
    return GridField(grid, psi)


# ---------------------------------------------------------------------------
# Spectral norms.


def wavenumbers(grid: Grid) -> np.ndarray:
    """Box Fourier wavenumbers pi*m/L in FFT order."""
    return TWO_PI * sfft.fftfreq(grid.n, d=grid.h)


def sobolev_norm(f: GridField, s: float) -> float:
    """Box surrogate (sum_k (1+|k|^2)^s |f_k|^2)^(1/2), normalised so s=0 is the L2 norm."""
    _require_scalar(f)
    if not -6.0 <= s <= 6.0:
        raise ValueError("Sobolev exponent must lie in [-6, 6]")
    grid = f.grid
    F = sfft.fft2(f.values)
    k = wavenumbers(grid)
    K2 = k[:, None] ** 2 + k[None, :] ** 2
    weight = (1.0 + K2) ** s
    total = np.sum(weight * np.abs(F) ** 2) * grid.h ** 2 / grid.n ** 2
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# Point evaluation.


def _as_points(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    return np.atleast_2d(pts), single


def _check_in_box(grid: Grid, pts: np.ndarray):
    if np.any(np.abs(pts) > grid.L) or not np.all(np.isfinite(pts)):
        raise OutOfBoxError("query point outside the grid box")


def _bilinear(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    s = (pts + grid.L) / grid.h - 0.5
    i = np.clip(np.floor(s).astype(int), 0, grid.n - 2)
    t = s - i  # may fall slightly outside [0, 1] in boundary half cells: linear extrapolation
    ix, iy = i[:, 0], i[:, 1]
    tx, ty = t[:, 0], t[:, 1]
    v00 = values[..., ix, iy]
    v10 = values[..., ix + 1, iy]
    v01 = values[..., ix, iy + 1]
    v11 = values[..., ix + 1, iy + 1]
    return (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
            + v01 * (1 - tx) * ty + v11 * tx * ty)


class CubicInterpolant:
    """Tensor-product interpolating cubic spline through the cell-centre samples.

    Evaluation outside the hull of cell centres clamps to the hull.
    """

    def __init__(self, f: GridField):
        self.grid = f.grid
        c = f.grid.centers
        vals = f.values if not f.is_scalar else f.values[None]
        self._splines = [RectBivariateSpline(c, c, v, kx=3, ky=3, s=0) for v in vals]
        self.scalar = f.is_scalar

    def __call__(self, pts, dx: int = 0, dy: int = 0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.array([s.ev(pts[:, 0], pts[:, 1], dx=dx, dy=dy) for s in self._splines])
        return out[0] if self.scalar else out.T

    def gradient(self, pts) -> np.ndarray:
        """For scalar fields: (M, 2) gradient.  For vector fields: (M, 2, 2) with [m, a, b] = d_a v_b."""
        gx = self(pts, dx=1)
        gy = self(pts, dy=1)
        if self.scalar:
            return np.stack([gx, gy], axis=-1)
        return np.stack([gx, gy], axis=1)


def interpolate(f: GridField, x, order: int = 1):
    """Evaluate f at point(s) x (shape (2,) or (M, 2)).

    order=1 is bilinear (exact for fields affine in each coordinate);
    order=3 uses the tensor cubic spline.
    """
    pts, single = _as_points(x)
    _check_in_box(f.grid, pts)
    if order == 1:
        out = _bilinear(f.grid, f.values, pts)
        out = out if f.is_scalar else out.T
    elif order == 3:
        out = CubicInterpolant(f)(pts)
    else:
        raise ValueError("order must be 1 or 3")
    return out[0] if single else out


def support_radius(f: GridField, threshold: float | None = None) -> float:
    """Largest |cell centre| over cells with |f| above threshold (0 if none)."""
    _require_scalar(f)
    a = np.abs(f.values)
    if threshold is None:
        threshold = 1e-12 * float(a.max(initial=0.0))
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    mask = a > threshold
    if not mask.any():
        return 0.0
    return float(f.grid.radius()[mask].max())


# ---------------------------------------------------------------------------
# Finite differences.


def gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order central differences (one-sided at the edges); returns (2, ...)."""
    gx = np.gradient(values, h, axis=-2, edge_order=2)
    gy = np.gradient(values, h, axis=-1, edge_order=2)
    return np.stack([gx, gy])


def divergence(vec: np.ndarray, h: float) -> np.ndarray:
    return (np.gradient(vec[0], h, axis=0, edge_order=2)
            + np.gradient(vec[1], h, axis=1, edge_order=2))


# ---------------------------------------------------------------------------
# Binary snapshots.


def write_snapshot(path, f: GridField):
    path = Path(path)
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, f.grid.L, f.grid.n, f.components)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path) -> GridField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, L, n, comps = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != comps * n * n:
        raise ValueError(f"{path}: expected {comps * n * n} samples, found {body.size}")
    shape = (n, n) if comps == 1 else (comps, n, n)
    return GridField(Grid(L, n), body.reshape(shape).astype(float))
