"""
Command-line entry point.

Exit codes: 0 on success, 2 for configuration errors and missing or
unreadable input files, 3 when a numerical stage fails (no basin for a mode,
no valid curve point, a record shorter than the analysis window, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from . import pipeline
from .io import InputFileError
from .pipeline import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("shallowloc")


def _common(p):
    p.add_argument("-c", "--config", help="INI configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("-o", "--out", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="shallowloc", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesise a record with its model curves")
    _common(p)
    p = sub.add_parser("separate", help="split a record into modal components")
    _common(p)
    p.add_argument("input", help="mono WAV record")
    p = sub.add_parser("curves", help="extract dispersion curves from modal components")
    _common(p)
    p.add_argument("components", nargs="+", help="mode_<n>.wav files in mode order")
    p = sub.add_parser("invert", help="recover parameters from a curves CSV")
    _common(p)
    p.add_argument("curves", help="curves CSV")
    p = sub.add_parser("run", help="all stages from a synthetic or recorded signal")
    _common(p)
    p.add_argument("--input", help="mono WAV record instead of the synthetic scene")
    p = sub.add_parser("bench", help="threshold and noise sweeps with summary tables")
    _common(p)
    return ap


def _dispatch(args, config):
    if args.command == "synth":
        return pipeline.cmd_synth(config, args.out)
    if args.command == "separate":
        return pipeline.cmd_separate(config, args.input, args.out)
    if args.command == "curves":
        return pipeline.cmd_curves(config, args.components, args.out)
    if args.command == "invert":
        return pipeline.cmd_invert(config, args.curves, args.out)
    if args.command == "run":
        return pipeline.cmd_run(config, args.out)
    return pipeline.cmd_bench(config, args.out)


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if getattr(args, "input", None) and args.command == "run":
        overrides.append(f"input={args.input}")
    try:
        config = pipeline.load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = _dispatch(args, config)
    except (ConfigError, InputFileError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.command}: wrote {len(manifest.artifacts)} files to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
