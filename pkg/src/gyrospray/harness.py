"""Experiment orchestration: configuration, initial data, coupled runs and fits."""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from . import __version__
from ._pairs import min_pair_distance
from .energy import (
    ENERGY_COLUMNS,
    BNPolicy,
    coercivity_report,
    energy_rate,
    modulated_energy,
)
from .errors import ConfigError, NumericalAbort, SamplingError, SprayError
from .field import CubicInterpolant, Grid, GridField, interpolate, support_radius, write_snapshot
from .macro import MacroState, diagnostics, macro_velocity, step_macro
from .micro import MicroState, ParticleEnsemble, microscopic_energy, step_micro
from .profiles import FAMILIES, make_profile

log = logging.getLogger(__name__)

SCHEMES = ("iid", "lattice", "low-discrepancy")
MACRO_COLUMNS = ("t", "mass_rho", "mass_omega", "l2_omega", "support_rho", "support_omega", "max_v", "max_V")
MICRO_ENERGY_COLUMNS = ("t", "kinetic", "interaction", "total")
TRAJECTORY_COLUMNS = ("t", "i", "qx", "qy", "px", "py")
COERCIVITY_COLUMNS = ("t", "dict_distance", "l2_omega_gap", "weak_rho_gap")


# ---------------------------------------------------------------------------
# Configuration.


@dataclass(frozen=True)
class ProfileSpec:
    family: str
    mass: float | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class VelocitySpec:
    kind: str = "V0"  # V0 | zero | constant
    value: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class ExperimentConfig:
    L: float = 2.0
    n: int = 128
    dt: float = 5e-3
    T_final: float = 0.5
    N_list: tuple = (64, 256, 1024, 4096)
    sampling: str = "lattice"
    seed: int = 0
    eps: float | None = None
    omega0: ProfileSpec = ProfileSpec("annulus", 1.0, {"inner": 0.8, "outer": 1.3})
    rho0: ProfileSpec = ProfileSpec("bump", 1.0, {"radius": 0.55})
    v0: VelocitySpec = VelocitySpec()
    out_dir: str = "runs/default"
    snapshot_every: int = 0
    energy_every: int = 1
    coercivity_every: int = 0
    coercivity_K: int = 4
    c0: float = 1.0
    omega_perturbation: float = 0.0
    jobs: int = 1
    source_text: str = field(default="", compare=False, repr=False)

    @property
    def grid(self) -> Grid:
        return Grid(self.L, self.n)

    @property
    def steps(self) -> int:
        return int(round(self.T_final / self.dt))

    def validate(self) -> "ExperimentConfig":
        try:
            Grid(self.L, self.n)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.T_final < 0:
            raise ConfigError("T_final must be nonnegative")
        if abs(self.steps * self.dt - self.T_final) > 1e-9 * max(1.0, self.T_final):
            raise ConfigError("T_final must be an integer multiple of dt")
        N = list(self.N_list)
        if not N or any(k < 1 for k in N) or any(b <= a for a, b in zip(N, N[1:])):
            raise ConfigError("N_list must be a strictly increasing list of positive integers")
        if self.sampling not in SCHEMES:
            raise ConfigError(f"sampling must be one of {SCHEMES}")
        for spec in (self.omega0, self.rho0):
            if spec.family not in FAMILIES:
                raise ConfigError(f"unknown profile family {spec.family!r}")
        if self.v0.kind not in ("V0", "zero", "constant"):
            raise ConfigError("v0 kind must be V0, zero or constant")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.energy_every < 1 or self.snapshot_every < 0 or self.coercivity_every < 0:
            raise ConfigError("cadences must be nonnegative (energy_every >= 1)")
        if not 0 <= self.coercivity_K <= 8:
            raise ConfigError("coercivity_K must lie in [0, 8]")
        if not self.c0 > 0:
            raise ConfigError("c0 must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        return self


_SCHEMA = {
    "grid": {"L": float, "n": int},
    "time": {"dt": float, "T_final": float},
    "particles": {"N_list": "ints", "sampling": str, "seed": int, "eps": "optfloat"},
    "v0": {"kind": str, "value": "floats"},
    "output": {"dir": str, "snapshot_every": int, "energy_every": int, "coercivity_every": int},
    "energy": {"c0": float, "coercivity_K": int, "omega_perturbation": float},
    "run": {"jobs": int},
}
_FIELD_NAMES = {"dir": "out_dir"}


def _convert(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if kind == "optfloat":
            return None if raw in ("", "none", "None") else float(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {where} = {raw!r}") from None


def _profile(section, where: str) -> ProfileSpec:
    if "family" not in section:
        raise ConfigError(f"[{where}] needs a family")
    params = {}
    mass = None
    for key, raw in section.items():
        if key == "family":
            continue
        vals = _convert("floats", raw, f"{where}.{key}")
        if key == "mass":
            mass = vals[0]
        elif key == "power":
            params[key] = int(vals[0])
        else:
            params[key] = vals if len(vals) > 1 else vals[0]
    return ProfileSpec(section["family"].strip(), mass, params)


def parse_config(text: str) -> ExperimentConfig:
    """Parse the INI experiment description; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    kw = {}
    for name in cp.sections():
        sec = cp[name]
        if name in ("omega0", "rho0"):
            kw[name] = _profile(sec, name)
            continue
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        for key, raw in sec.items():
            if key not in _SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            val = _convert(_SCHEMA[name][key], raw, f"{name}.{key}")
            if name == "v0":
                kw.setdefault("_v0", {})[key] = val
            else:
                kw[_FIELD_NAMES.get(key, key)] = val
    v0 = kw.pop("_v0", None)
    if v0 is not None:
        kw["v0"] = VelocitySpec(v0.get("kind", "V0"), tuple(v0.get("value", (0.0, 0.0))))
    return ExperimentConfig(source_text=text, **kw).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text equivalent to cfg (used when no source text is available)."""
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(repr(x) for x in v)
        return "" if v is None else str(v)

    lines = [
        "[grid]", f"L = {cfg.L!r}", f"n = {cfg.n}",
        "", "[time]", f"dt = {cfg.dt!r}", f"T_final = {cfg.T_final!r}",
        "", "[particles]", f"N_list = {fmt(cfg.N_list)}", f"sampling = {cfg.sampling}",
        f"seed = {cfg.seed}", f"eps = {fmt(cfg.eps)}",
    ]
    for name in ("omega0", "rho0"):
        spec = getattr(cfg, name)
        lines += ["", f"[{name}]", f"family = {spec.family}"]
        if spec.mass is not None:
            lines.append(f"mass = {spec.mass!r}")
        lines += [f"{k} = {fmt(v)}" for k, v in spec.params.items()]
    lines += [
        "", "[v0]", f"kind = {cfg.v0.kind}", f"value = {fmt(cfg.v0.value)}",
        "", "[output]", f"dir = {cfg.out_dir}", f"snapshot_every = {cfg.snapshot_every}",
        f"energy_every = {cfg.energy_every}", f"coercivity_every = {cfg.coercivity_every}",
        "", "[energy]", f"c0 = {cfg.c0!r}", f"coercivity_K = {cfg.coercivity_K}",
        f"omega_perturbation = {cfg.omega_perturbation!r}",
        "", "[run]", f"jobs = {cfg.jobs}", "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Initial data.


def _make(grid: Grid, spec: ProfileSpec) -> GridField:
    try:
        return make_profile(grid, spec.family, spec.mass, **spec.params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad profile {spec}: {e}") from None


def initial_macro(cfg: ExperimentConfig) -> MacroState:
    grid = cfg.grid
    omega = _make(grid, cfg.omega0)
    rho = _make(grid, cfg.rho0)
    if cfg.v0.kind == "zero":
        v = grid.zeros(2)
    elif cfg.v0.kind == "constant":
        c = np.asarray(cfg.v0.value, dtype=float)
        v = GridField(grid, np.broadcast_to(c[:, None, None], (2, grid.n, grid.n)).copy())
    else:
        v = macro_velocity(MacroState(omega, rho, grid.zeros(2)))
    return MacroState(omega, rho, v)


def initial_omega_N(cfg: ExperimentConfig, macro0: MacroState) -> GridField:
    """omega_N^0 = omega_0, optionally with a mass-neutral angular ripple."""
    if cfg.omega_perturbation == 0.0:
        return macro0.omega
    X, Y = cfg.grid.mesh()
    ripple = 1.0 + cfg.omega_perturbation * np.cos(3.0 * np.arctan2(Y, X))
    return GridField(cfg.grid, macro0.omega.values * ripple)


def precheck_support(cfg: ExperimentConfig, macro0: MacroState, safety: float = 2.0) -> float:
    """Raise ConfigError unless R_0 + safety * T * max(|v_0|, |V_0|) stays 4h inside the box.

    rho moves with v and omega with V; the safety factor allows the speeds to
    grow during the run.
    """
    grid = cfg.grid
    R0 = max(support_radius(macro0.rho), support_radius(macro0.omega))
    speed = max(macro0.v.max_abs(), macro_velocity(macro0).max_abs())
    reach = R0 + safety * cfg.T_final * speed
    limit = grid.L - 4.0 * grid.h
    if reach > limit:
        raise ConfigError(
            f"supports may leave the safe region: R0 + {safety:g} T max|velocity| = {reach:.4f} > {limit:.4f}"
        )
    return limit - reach


def _rosenblatt(rho: GridField, u: np.ndarray) -> np.ndarray:
    """Map points of the unit square to the piecewise-constant density rho."""
    grid = rho.grid
    w = np.clip(rho.values, 0.0, None)
    col = w.sum(axis=1)
    cx = np.concatenate([[0.0], np.cumsum(col)]) / col.sum()
    i = np.clip(np.searchsorted(cx, u[:, 0], side="right") - 1, 0, grid.n - 1)
    # skip empty columns that searchsorted can land on at the boundaries
    while np.any(col[i] == 0.0):
        bad = col[i] == 0.0
        i[bad] = np.where(cx[i[bad] + 1] <= u[bad, 0], i[bad] + 1, i[bad] - 1)
    fx = (u[:, 0] - cx[i]) / (cx[i + 1] - cx[i])
    rows = w[i]
    cy = np.concatenate([np.zeros((len(i), 1)), np.cumsum(rows, axis=1)], axis=1)
    cy /= cy[:, -1:]
    j = np.array([min(max(np.searchsorted(c, uy, side="right") - 1, 0), grid.n - 1)
                  for c, uy in zip(cy, u[:, 1])], dtype=int)
    for k in np.nonzero(rows[np.arange(len(j)), j] == 0.0)[0]:
        nz = np.nonzero(rows[k])[0]
        j[k] = nz[np.argmin(np.abs(nz - j[k]))]
    span = cy[np.arange(len(j)), j + 1] - cy[np.arange(len(j)), j]
    fy = np.clip((u[:, 1] - cy[np.arange(len(j)), j]) / np.where(span > 0, span, 1.0), 0.0, 1.0)
    x = -grid.L + (i + np.clip(fx, 0.0, 1.0)) * grid.h
    y = -grid.L + (j + fy) * grid.h
    return np.column_stack([x, y])


def _unit_points(scheme: str, N: int, rng: np.random.Generator, state: dict) -> np.ndarray:
    if scheme == "iid":
        return rng.random((N, 2))
    if scheme == "low-discrepancy":
        eng = state.setdefault("halton", qmc.Halton(d=2, scramble=True, seed=rng))
        return eng.random(N)
    # lattice: tensor grid when N is a square, otherwise a golden-ratio rank-1 lattice
    if "lattice" not in state:
        state["lattice"] = True
        m = math.isqrt(N)
        if m * m == N:
            a = (np.arange(m) + 0.5) / m
            A, B = np.meshgrid(a, a, indexing="ij")
            return np.column_stack([A.ravel(), B.ravel()])
        k = np.arange(N)
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        return np.column_stack([(k + 0.5) / N, np.mod(0.5 + k * golden, 1.0)])
    return rng.random((N, 2))  # replacements for rejected lattice points


def sample_particles(rho0: GridField, N: int, scheme: str = "iid", seed=0,
                     omega0: GridField | None = None, v0: GridField | None = None,
                     max_retries: int = 100) -> ParticleEnsemble:
    """Positions with density rho0 / int rho0, kept off supp omega0, momenta p = v0(q)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    if N < 1:
        raise ValueError("N must be positive")
    if np.min(rho0.values) < 0.0 or np.sum(rho0.values) <= 0.0:
        raise SamplingError("rho0 must be nonnegative with positive mass")
    grid = rho0.grid
    rng = np.random.default_rng(seed)
    state: dict = {}
    Q = _rosenblatt(rho0, _unit_points(scheme, N, rng, state))

    def rejected(pts):
        bad = np.zeros(len(pts), dtype=bool)
        if omega0 is not None:
            bad |= interpolate(omega0, pts) != 0.0
        return bad

    bad = rejected(Q)
    if bad.any():
        warnings.warn(f"{bad.sum()} of {N} samples fell in the vorticity support; resampling",
                      RuntimeWarning, stacklevel=2)
    tries = 0
    while True:
        if not bad.any():
            if N < 2 or min_pair_distance(Q) > 1e-10 * grid.L:
                break
            # coincident points: redraw the later copy of each close pair
            _, first = np.unique(np.round(Q / (1e-10 * grid.L)), axis=0, return_index=True)
            bad = np.ones(N, dtype=bool)
            bad[first] = False
        tries += 1
        if tries > max_retries:
            raise SamplingError(
                f"could not place {bad.sum()} particles outside the vorticity support "
                f"after {max_retries} retries"
            )
        Q[bad] = _rosenblatt(rho0, _unit_points(scheme, int(bad.sum()), rng, state))
        bad = rejected(Q)

    if v0 is None:
        P = np.zeros_like(Q)
    else:
        P = CubicInterpolant(v0)(Q)
    return ParticleEnsemble(Q, P)


def initial_micro(cfg: ExperimentConfig, macro0: MacroState, N: int) -> MicroState:
    if not np.any(macro0.rho.values):
        # the empirical measure of a zero density is empty: no particles at all
        log.warning("N=%d: rho_0 vanishes, running without particles", N)
        empty = np.zeros((0, 2))
        return MicroState(initial_omega_N(cfg, macro0), ParticleEnsemble(empty, empty), 0.0, cfg.eps)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        particles = sample_particles(macro0.rho, N, cfg.sampling, [cfg.seed, N],
                                     omega0=macro0.omega, v0=macro0.v)
    for w in caught:
        log.warning("N=%d: %s", N, w.message)
    return MicroState(initial_omega_N(cfg, macro0), particles, 0.0, cfg.eps)


# ---------------------------------------------------------------------------
# Output helpers.


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class RowWriter:
    """CSV writer that flushes whole rows so an aborted run leaves a parseable file."""

    def __init__(self, path, columns):
        self.columns = tuple(columns)
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict):
        self._w.writerow([_fmt(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def prepare_run_dir(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.source_text or dump_config(cfg), encoding="utf-8")
    (out / "VERSION").write_text(f"gyrospray {__version__}\n", encoding="utf-8")
    return out


def _snapshot_dir(out: Path) -> Path:
    d = out / "snapshots"
    d.mkdir(exist_ok=True)
    return d


def write_particles(path, t: float, particles: ParticleEnsemble):
    with RowWriter(path, TRAJECTORY_COLUMNS) as w:
        for i, (q, p) in enumerate(zip(particles.Q, particles.P)):
            w.write({"t": t, "i": i, "qx": q[0], "qy": q[1], "px": p[0], "py": p[1]})


def read_particles(path) -> tuple[float, ParticleEnsemble]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = float(data[0, 0]) if len(data) else 0.0
    return t, ParticleEnsemble(data[:, 2:4], data[:, 4:6])


# ---------------------------------------------------------------------------
# Runs.


class RunAbort(NumericalAbort):
    """A solver error during a run, tagged with the offending N and time."""

    def __init__(self, message, N=None, t=None, cause: Exception | None = None):
        super().__init__(message)
        self.N, self.t, self.cause = N, t, cause


def _cadence(k: int, every: int, last: int) -> bool:
    return every > 0 and (k % every == 0 or k == last)


def run_macro(cfg: ExperimentConfig, out: Path | None = None, keep_every: int | None = None):
    """Step the macro system to T_final; returns {step: state} at the energy cadence."""
    keep_every = cfg.energy_every if keep_every is None else keep_every
    state = initial_macro(cfg)
    precheck_support(cfg, state)
    steps = cfg.steps
    kept = {}
    writer = RowWriter(out / "macro_diagnostics.csv", MACRO_COLUMNS) if out is not None else None
    snaps = _snapshot_dir(out) if (out is not None and cfg.snapshot_every) else None
    try:
        for k in range(steps + 1):
            if _cadence(k, keep_every, steps) or k == 0:
                kept[k] = state
            if writer is not None:
                writer.write(diagnostics(state))
            if snaps is not None and _cadence(k, cfg.snapshot_every, steps):
                for name in ("omega", "rho", "v"):
                    write_snapshot(snaps / f"macro_{name}_{k:06d}.spry", getattr(state, name))
            if k < steps:
                try:
                    state = step_macro(state, cfg.dt)
                except SprayError as e:
                    raise RunAbort(f"macro run aborted at t={state.t:.6g}: {e}", None, state.t, e) from e
    finally:
        if writer is not None:
            writer.close()
    return kept


class NResult(NamedTuple):
    N: int
    H0: float
    sup_Htilde: float
    final_coercivity: tuple | None
    final_Htilde: float
    rows: int


def _energy_row(macro, micro, policy, dt):
    e = modulated_energy(macro, micro, policy, dt=dt)
    return e.with_rates(*energy_rate(macro, micro, dt=dt))


def run_one(cfg: ExperimentConfig, N: int, macro_states: dict, out: Path | None = None) -> NResult:
    """Co-step the micro system for one N against a precomputed macro trajectory."""
    steps = cfg.steps
    macro0 = macro_states[0]
    micro = initial_micro(cfg, macro0, N)
    policy = BNPolicy(c0=cfg.c0).frozen_at(macro0, micro)
    tag = f"N{N:05d}"
    writers = {}
    if out is not None:
        writers["energy"] = RowWriter(out / f"energy_{tag}.csv", ENERGY_COLUMNS)
        writers["micro"] = RowWriter(out / f"micro_energy_{tag}.csv", MICRO_ENERGY_COLUMNS)
        writers["coerc"] = RowWriter(out / f"coercivity_{tag}.csv", COERCIVITY_COLUMNS)
    snaps = _snapshot_dir(out) if (out is not None and cfg.snapshot_every) else None

    # each energy row is written once its successor exists, so that H_rate_fd
    # is the centred difference over the neighbouring rows
    buf = {"prev": None, "cur": None}
    rows = 0

    def push(e):
        nonlocal rows
        cur, prev = buf["cur"], buf["prev"]
        if cur is not None:
            fd = (e.H - prev.H) / (e.t - prev.t) if prev is not None else math.nan
            if "energy" in writers:
                writers["energy"].write(replace(cur, H_rate_fd=fd).row())
            rows += 1
        buf["prev"], buf["cur"] = cur, e

    sup_h = -math.inf
    H0 = last_h = math.nan
    coerc = None
    t = 0.0
    try:
        for k in range(steps + 1):
            t = micro.t
            if k == 0 or _cadence(k, cfg.energy_every, steps):
                macro = macro_states[k]
                e = _energy_row(macro, micro, policy, cfg.dt)
                if k == 0:
                    H0 = e.H
                last_h = abs(e.H - e.T6)
                sup_h = max(sup_h, last_h)
                push(e)
                if "micro" in writers:
                    me = microscopic_energy(micro)
                    writers["micro"].write({"t": micro.t, **me._asdict()})
                if k == steps or (cfg.coercivity_every and _cadence(k, cfg.coercivity_every, steps)):
                    coerc = coercivity_report(macro, micro, cfg.coercivity_K)
                    if "coerc" in writers:
                        writers["coerc"].write(coerc._asdict())
            if snaps is not None and _cadence(k, cfg.snapshot_every, steps):
                write_snapshot(snaps / f"micro_omega_{tag}_{k:06d}.spry", micro.omega)
                write_particles(snaps / f"particles_{tag}_{k:06d}.csv", micro.t, micro.particles)
            if k < steps:
                micro = step_micro(micro, cfg.dt)
    except SprayError as e:
        raise RunAbort(f"N={N} aborted at t={t:.6g}: {e}", N, t, e) from e
    finally:
        if buf["cur"] is not None:
            if "energy" in writers:
                writers["energy"].write(buf["cur"].row())
            rows += 1
        for w in writers.values():
            w.close()
    return NResult(N, H0, sup_h, tuple(coerc) if coerc else None, last_h, rows)


def _run_one_job(args):
    cfg, N, states, out = args
    return run_one(cfg, N, states, out)


class RunResult(NamedTuple):
    config: ExperimentConfig
    results: list
    out_dir: Path | None


def run_coupled(cfg: ExperimentConfig, out_dir=None, jobs: int | None = None) -> RunResult:
    """Macro trajectory once, then one micro run per N (optionally in worker processes)."""
    out = prepare_run_dir(cfg, out_dir) if out_dir is not None else None
    states = run_macro(cfg, out)
    jobs = cfg.jobs if jobs is None else jobs
    args = [(cfg, N, states, out) for N in cfg.N_list]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one_job, args))
    else:
        results = [_run_one_job(a) for a in args]
    return RunResult(cfg, results, out)


# ---------------------------------------------------------------------------
# Fits.


class DecayFit(NamedTuple):
    beta: float
    C: float
    r2: float
    residuals: np.ndarray
    degenerate: bool


def fit_decay(N_list, values) -> DecayFit:
    """Least squares of log(values) against log(N): values ~ C N^(-beta)."""
    N = np.asarray(N_list, dtype=float)
    y = np.asarray(values, dtype=float)
    if N.size < 3 or N.size != y.size:
        raise ValueError("fit_decay needs at least three (N, value) pairs")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        return DecayFit(math.nan, math.nan, math.nan, np.full(N.size, math.nan), True)
    x, ly = np.log(N), np.log(y)
    if np.ptp(ly) == 0.0:
        return DecayFit(0.0, float(y[0]), math.nan, np.zeros(N.size), True)
    slope, intercept = np.polyfit(x, ly, 1)
    res = ly - (slope * x + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss_tot
    return DecayFit(float(-slope), float(math.exp(intercept)), r2, res, False)


class CoercivityFit(NamedTuple):
    C: float  # smallest C with distance <= C * bound for every N
    C_lsq: float
    ratios: np.ndarray
    decreasing: bool


def fit_coercivity(N_list, distances, h_tilde, exponent: float = 1.0 / 3.0) -> CoercivityFit:
    """Single constant C in  distance_N <= C (Htilde_N + N^-exponent)^(1/2)."""
    N = np.asarray(N_list, dtype=float)
    d = np.asarray(distances, dtype=float)
    bound = np.sqrt(np.asarray(h_tilde, dtype=float) + N ** -exponent)
    ratios = d / bound
    C_lsq = float(np.dot(d, bound) / np.dot(bound, bound))
    return CoercivityFit(float(np.max(ratios)), C_lsq, ratios, bool(np.all(np.diff(d) < 0)))


def summarize(run: RunResult) -> dict:
    res = sorted(run.results, key=lambda r: r.N)
    Ns = [r.N for r in res]
    summary = {"version": __version__, "N": Ns, "sup_Htilde": [r.sup_Htilde for r in res],
               "H0": [r.H0 for r in res]}
    if len(Ns) >= 3:
        fit = fit_decay(Ns, summary["sup_Htilde"])
        summary["decay"] = {"beta": fit.beta, "C": fit.C, "r2": fit.r2,
                            "residuals": list(map(float, fit.residuals)), "degenerate": fit.degenerate}
    if all(r.final_coercivity for r in res) and len(Ns) >= 2:
        d = [r.final_coercivity[1] for r in res]
        cf = fit_coercivity(Ns, d, [r.final_Htilde for r in res])
        summary["coercivity"] = {"t": res[0].final_coercivity[0], "distance": d, "C": cf.C,
                                 "C_lsq": cf.C_lsq, "ratios": list(map(float, cf.ratios)),
                                 "decreasing": cf.decreasing}
    if run.out_dir is not None:
        with open(Path(run.out_dir) / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def run_micro(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Micro system alone for every N: energy log and particle trajectory."""
    out = prepare_run_dir(cfg, out_dir) if out_dir is not None else None
    macro0 = initial_macro(cfg)
    precheck_support(cfg, macro0)
    steps = cfg.steps
    drift = {}
    for N in cfg.N_list:
        micro = initial_micro(cfg, macro0, N)
        tag = f"N{N:05d}"
        E0 = microscopic_energy(micro).total
        worst = 0.0
        ew = RowWriter(out / f"micro_energy_{tag}.csv", MICRO_ENERGY_COLUMNS) if out else None
        tw = RowWriter(out / f"trajectory_{tag}.csv", TRAJECTORY_COLUMNS) if out else None
        snaps = _snapshot_dir(out) if (out is not None and cfg.snapshot_every) else None
        try:
            for k in range(steps + 1):
                if k == 0 or _cadence(k, cfg.energy_every, steps):
                    me = microscopic_energy(micro)
                    worst = max(worst, abs(me.total - E0) / (1.0 + abs(E0)))
                    if ew:
                        ew.write({"t": micro.t, **me._asdict()})
                    if tw:
                        for i, (q, p) in enumerate(zip(micro.particles.Q, micro.particles.P)):
                            tw.write({"t": micro.t, "i": i, "qx": q[0], "qy": q[1], "px": p[0], "py": p[1]})
                if snaps is not None and _cadence(k, cfg.snapshot_every, steps):
                    write_snapshot(snaps / f"micro_omega_{tag}_{k:06d}.spry", micro.omega)
                    write_particles(snaps / f"particles_{tag}_{k:06d}.csv", micro.t, micro.particles)
                if k < steps:
                    micro = step_micro(micro, cfg.dt)
        except SprayError as e:
            raise RunAbort(f"N={N} aborted at t={micro.t:.6g}: {e}", N, micro.t, e) from e
        finally:
            for w in (ew, tw):
                if w:
                    w.close()
        drift[N] = worst
    return drift
