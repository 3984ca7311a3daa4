"""Post-processing of run directories: energy breakdowns from snapshots and
invariant checks on the logged CSVs."""
from __future__ import annotations

import re
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .energy import ENERGY_COLUMNS, BNPolicy, energy_rate, modulated_energy
from .errors import ConfigError
from .field import read_snapshot
from .harness import RowWriter, load_config, read_particles
from .macro import MacroState, check_support_bound
from .micro import MicroState

MASS_RTOL = 1e-8
SUM_TOL = 1e-12


def _read_csv(path) -> dict:
    """Column name -> float array (an empty file gives empty columns)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return {c: np.zeros(0) for c in header}
    return {c: data[:, k] for k, c in enumerate(header)}


def _run_dir(path) -> Path:
    run = Path(path)
    if not (run / "config.ini").is_file():
        raise ConfigError(f"{run} is not a run directory (no config.ini)")
    return run


def energy_report(run_dir) -> dict:
    """Recompute energy breakdowns from the snapshots of a coupled run.

    Writes energy_report_N*.csv next to the snapshots and returns
    {N: number of rows}.
    """
    run = _run_dir(run_dir)
    cfg = load_config(run / "config.ini")
    snaps = run / "snapshots"
    if not snaps.is_dir():
        raise ConfigError(f"{run} has no snapshots (set snapshot_every > 0)")
    steps = sorted(int(m.group(1)) for p in snaps.glob("macro_omega_*.spry")
                   if (m := re.search(r"_(\d+)\.spry$", p.name)))
    counts = {}
    for N in cfg.N_list:
        tag = f"N{N:05d}"
        policy = None
        rows = 0
        with RowWriter(run / f"energy_report_{tag}.csv", ENERGY_COLUMNS) as w:
            for k in steps:
                pfile = snaps / f"particles_{tag}_{k:06d}.csv"
                wfile = snaps / f"micro_omega_{tag}_{k:06d}.spry"
                if not (pfile.exists() and wfile.exists()):
                    continue
                t, particles = read_particles(pfile)
                macro = MacroState(*(read_snapshot(snaps / f"macro_{n}_{k:06d}.spry")
                                     for n in ("omega", "rho", "v")), t=t)
                micro = MicroState(read_snapshot(wfile), particles, t, cfg.eps)
                if policy is None:
                    policy = BNPolicy(c0=cfg.c0).frozen_at(macro, micro)
                e = modulated_energy(macro, micro, policy, dt=cfg.dt)
                w.write(e.with_rates(*energy_rate(macro, micro, dt=cfg.dt)).row())
                rows += 1
        counts[N] = rows
    return counts


class CheckResult(NamedTuple):
    name: str
    ok: bool
    detail: str


def _rel_drift(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(x - x[0])) / max(abs(x[0]), 1e-300))


def check_run(run_dir) -> list[CheckResult]:
    """Invariant suite over the CSV logs of a run directory."""
    run = _run_dir(run_dir)
    cfg = load_config(run / "config.ini")
    h = cfg.grid.h
    out = []

    macro_csv = run / "macro_diagnostics.csv"
    if macro_csv.exists():
        d = _read_csv(macro_csv)
        for name in ("mass_rho", "mass_omega"):
            drift = _rel_drift(d[name])
            out.append(CheckResult(f"{name} conserved", drift <= MASS_RTOL, f"relative drift {drift:.3e}"))
        for field, speed in (("support_rho", "max_v"), ("support_omega", "max_V")):
            if d["t"].size:
                rep = check_support_bound(d["t"], d[field], d[speed], h)
                out.append(CheckResult(f"{field} bound", rep.ok, f"min margin {rep.margin:.4g}"))

    for path in sorted(run.glob("energy_N*.csv")) + sorted(run.glob("energy_report_N*.csv")):
        d = _read_csv(path)
        if d["t"].size == 0:
            continue
        T = np.stack([d[f"T{k}"] for k in range(1, 7)])
        scale = 1.0 + np.max(np.abs(T), axis=0)
        gap = float(np.max(np.abs(d["H"] - T.sum(axis=0)) / scale))
        out.append(CheckResult(f"{path.name}: H = sum of terms", gap <= 1e-12, f"max gap {gap:.2e}"))
        neg = float(min(d["T1"].min(), d["T5"].min()))
        out.append(CheckResult(f"{path.name}: T1, T5 >= 0", neg >= 0.0, f"min {neg:.3e}"))
        block = d["T2"] + d["T3"] + d["T4"] + d["T6"]
        out.append(CheckResult(f"{path.name}: Coulomb block + T6 >= 0", bool(np.all(block >= 0.0)),
                               f"min {block.min():.4g}"))

    for path in sorted(run.glob("micro_energy_N*.csv")):
        d = _read_csv(path)
        if d["t"].size:
            e = d["total"]
            drift = float(np.max(np.abs(e - e[0])) / (1.0 + abs(e[0])))
            out.append(CheckResult(f"{path.name}: energy drift (reported)", True, f"{drift:.3e}"))
    if not out:
        raise ConfigError(f"{run} contains no logs to check")
    return out
