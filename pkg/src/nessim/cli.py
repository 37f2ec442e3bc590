"""Command line interface: ``nessim run <cfg>`` and ``nessim validate <cfg>``.

Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
failure (energy blow-up).  Diagnostics go to stderr; ``run`` writes
``summary.json`` plus experiment CSVs into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from ._backend import backend_info
from .config import ConfigError, resolve, validation_report
from .experiments import RUNNERS
from .sde_dynamics import BlowUp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nessim",
        description="Oscillator-chain heat-conduction experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="INI configuration file")
    run_p.add_argument("--output-dir", help="override [experiment] output_dir")
    run_p.add_argument("--seed", type=int, help="override [experiment] seed")
    run_p.add_argument("--threads", type=int,
                       help="override [experiment] threads")

    val_p = sub.add_parser("validate",
                           help="check a config file without running")
    val_p.add_argument("config", help="INI configuration file")
    return parser


def cmd_run(args) -> int:
    overrides = {"output_dir": args.output_dir, "seed": args.seed,
                 "threads": args.threads}
    try:
        cfg = resolve(args.config, overrides=overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        results = RUNNERS[cfg.kind](cfg, outdir)
    except BlowUp as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary = {
        "experiment": cfg.kind,
        "version": __version__,
        "backend": backend_info(),
        "seed": cfg.seed,
        "wall_time_s": time.time() - started,
        "parameters": cfg.resolved,
        "resolved_config_ini": cfg.resolved_ini(),
        "results": results,
    }
    with open(outdir / "summary.json", "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {outdir / 'summary.json'}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    ok, messages = validation_report(args.config)
    for msg in messages:
        print(msg, file=sys.stderr if not ok else sys.stdout)
    return EXIT_OK if ok else EXIT_CONFIG


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
