"""Command line entry point.

Exit codes: 0 ok, 2 configuration error, 3 numerical abort, 4 invariant failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import __version__
from .errors import ConfigError, SprayError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("gyrospray")


def _config(args):
    from .harness import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        # the echoed config must describe what actually ran
        cfg = dataclasses.replace(cfg, source_text="", **overrides).validate()
    return cfg


def _echo(cfg):
    from .harness import dump_config

    print(cfg.source_text or dump_config(cfg), end="" if (cfg.source_text or "").endswith("\n") else "\n")


def cmd_simulate_micro(args):
    from .harness import run_micro

    cfg = _config(args)
    _echo(cfg)
    drift = run_micro(cfg, cfg.out_dir)
    for N, d in drift.items():
        print(f"N={N}: max relative energy drift {d:.3e}")
    return EXIT_OK


def cmd_simulate_macro(args):
    from .harness import prepare_run_dir, run_macro

    cfg = _config(args)
    _echo(cfg)
    out = prepare_run_dir(cfg, cfg.out_dir)
    run_macro(cfg, out)
    print(f"macro run written to {out}")
    return EXIT_OK


def cmd_converge(args):
    from .harness import run_coupled, summarize

    cfg = _config(args)
    _echo(cfg)
    run = run_coupled(cfg, cfg.out_dir)
    print(json.dumps(summarize(run), indent=2, sort_keys=True))
    return EXIT_OK


def _run_dir(args):
    if args.out is None:
        raise ConfigError("--out must name an existing run directory")
    return args.out


def cmd_energy_report(args):
    from .report import energy_report

    counts = energy_report(_run_dir(args))
    for N, rows in counts.items():
        print(f"N={N}: {rows} breakdowns")
    return EXIT_OK


def cmd_check(args):
    from .report import check_run

    results = check_run(_run_dir(args))
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVARIANT


COMMANDS = {
    "simulate-micro": (cmd_simulate_micro, "run the particle system alone for every N"),
    "simulate-macro": (cmd_simulate_macro, "run the spray system alone"),
    "converge": (cmd_converge, "coupled sweep over N with energy and coercivity fits"),
    "energy-report": (cmd_energy_report, "recompute energy breakdowns from a run's snapshots"),
    "check": (cmd_check, "run the invariant suite on a run directory"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gyrospray", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gyrospray {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", metavar="PATH", help="INI experiment description")
        s.add_argument("--out", metavar="DIR", help="run directory (output, or input for energy-report/check)")
        s.add_argument("--seed", type=int, metavar="U64", help="override the sampling seed")
        s.add_argument("--jobs", type=int, metavar="K", help="parallel worker processes over N")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SprayError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
