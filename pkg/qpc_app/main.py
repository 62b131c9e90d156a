#!/usr/bin/env python3
"""
qpc07 - QPC 0.7-anomaly simulator and analysis toolkit.

Command-line entry point. Subcommands:
    synthesize    write synthetic traces and a cohort manifest
    run           MUX schedule, synthesis, analysis and cohort report
    analyze       analyse stored traces from a manifest or trace directory
    spectroscopy  subband spacing from stored bias families
    report        re-aggregate stored results
    mux-check     exhaustive MUX addressing checks and a dry sweep

Exit codes: 0 on success, 1 on a fatal error, 2 for invalid arguments.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import RunConfig, load_run_config, parse_set_flags, setup_logging
from errors import ConfigurationError
from qpc_controller import RunController


logger = logging.getLogger("qpc07")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--manifest", help="Re-run with the configuration of a previous manifest")
    common.add_argument("--output", help="Output directory")
    common.add_argument("--seed", type=int, help="Root random seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Dotted configuration override, e.g. analysis.good_fit_rms=0.03")
    common.add_argument("--workers", type=int, help="Worker processes for device passes")
    common.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    common.add_argument("-v", "--verbose", action="store_true", help="Shortcut for DEBUG logging")

    cohort = argparse.ArgumentParser(add_help=False)
    cohort.add_argument("--temperatures", type=_float_list, help="Temperatures in K, e.g. 0.04,1.4")
    cohort.add_argument("--cooldowns", type=int, help="Number of cooldowns")
    cohort.add_argument("--illuminated", action="store_true",
                        help="Add an illuminated cooldown after the dark ones")
    cohort.add_argument("--chips", type=_int_list, help="Chip subset, e.g. 1,2")

    parser = argparse.ArgumentParser(
        prog="qpc07", description="QPC 0.7-anomaly simulator and analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synthesize", parents=[common, cohort],
                   help="Write synthetic traces and a cohort manifest")
    run = sub.add_parser("run", parents=[common, cohort],
                         help="Full pipeline: MUX schedule, synthesis, analysis, report")
    run.add_argument("--save-traces", action="store_true", help="Also store every trace")
    for name, text in (("analyze", "Analyse stored traces"),
                       ("spectroscopy", "Subband spacing from stored bias families")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("source", help="Manifest file or trace directory")
    report = sub.add_parser("report", parents=[common], help="Re-aggregate stored results")
    report.add_argument("run_dir", help="Run directory or results directory")
    mux = sub.add_parser("mux-check", parents=[common], help="MUX addressing checks")
    mux.add_argument("--chips", type=_int_list, help="Chip subset, e.g. 1,2")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file (or manifest), then --set overrides, then explicit flags."""
    overrides = parse_set_flags(args.set)
    flags = {
        'cohort.seed': args.seed,
        'output_dir': args.output,
        'workers': args.workers,
        'cohort.temperatures': getattr(args, 'temperatures', None),
        'cooldowns': getattr(args, 'cooldowns', None),
        'chips': getattr(args, 'chips', None),
        'illuminated': True if getattr(args, 'illuminated', False) else None,
        'save_traces': True if getattr(args, 'save_traces', False) else None,
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_run_config(args.manifest or args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = "DEBUG" if args.verbose else args.log_level
    try:
        config = resolve_config(args)
    except ConfigurationError as e:
        setup_logging(level)
        logger.error("Configuration error: %s", e)
        return 1

    writes_run_dir = args.command in ("synthesize", "run", "mux-check")
    log_file = Path(config.resolved_output_dir()) / "run.log" if writes_run_dir else None
    try:
        setup_logging(level, log_file)
    except OSError as e:
        setup_logging(level)
        logger.error("Cannot open log file %s: %s", log_file, e)
        return 1

    controller = RunController(config)
    controller.set_callbacks(progress=logger.info, warning=logger.warning, error=logger.error)
    commands = {
        "synthesize": controller.synthesize,
        "run": controller.run,
        "analyze": lambda: controller.analyze(args.source),
        "spectroscopy": lambda: controller.spectroscopy(args.source),
        "report": lambda: controller.aggregate(args.run_dir),
        "mux-check": controller.mux_check,
    }
    ok = commands[args.command]()
    if controller.warnings:
        logger.info("%d warnings", len(controller.warnings))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
