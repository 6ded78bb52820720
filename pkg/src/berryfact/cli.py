"""Command-line front end.

    berryfact <bo-scan|berry|full|mass-sweep> --config FILE
              [--out DIR] [--threads N] [--preset desk|default|fine]

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence or
classification failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, PRESETS, load_config
from .eigensolve import EigenSolveError
from .exact_fact import ClassificationError
from .experiments import cmd_berry, cmd_bo_scan, cmd_full, cmd_mass_sweep

_COMMANDS = {
    "bo-scan": cmd_bo_scan,
    "berry": cmd_berry,
    "full": cmd_full,
    "mass-sweep": cmd_mass_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="berryfact",
        description="Born-Oppenheimer Berry phases vs exact factorization "
                    "for the 2D three-ion model (data files only; no plots).")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("bo-scan", "scan the BO surfaces, fix the gauge, report seams"),
        ("berry", "Wilson-loop battery on the scanned states"),
        ("full", "full 4D solve, factorization, A/B classification"),
        ("mass-sweep", "repeat the full analysis across nuclear masses"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes for the nuclear scan")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="grid preset overriding the config point counts")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, preset=args.preset)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        manifest = _COMMANDS[args.command](cfg, out_dir=args.out, preset=args.preset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (EigenSolveError, ClassificationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3

    for key, value in manifest.headlines.items():
        print(f"{key} = {value}")
    print(f"outputs written to {args.out or cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
