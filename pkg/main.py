#!/usr/bin/env python3
"""
Main entry point for augcl.

Subcommands:
  run         train CL and MTL over a curriculum for every seed and write the report
  single-aug  train with one augmentation family at a time and probe
  report      rebuild report files from a finished run directory
"""
import argparse
import signal
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.config.curricula import get_curriculum
from src.config.settings import EnvironmentConfig, LoggingConfig, load_experiment_config
from src.core.exceptions import BaseAugclError, ConfigurationError, DataError, LogCorruptionError
from src.eval.report import RunReport, regenerate_report
from src.train.experiment import (
    load_experiment_data,
    parse_kinds,
    run_experiment,
    run_single_augmentation,
    run_sweep,
)
from src.utils.logger import setup_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_LOG_CORRUPTION = 4


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented process exit status."""
    if isinstance(error, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(error, DataError):
        return EXIT_DATA
    if isinstance(error, LogCorruptionError):
        return EXIT_LOG_CORRUPTION
    return EXIT_FAILURE


def signal_handler(signum, frame):
    """Turn SIGTERM into KeyboardInterrupt so run logs are closed cleanly."""
    print(f"\n🛑 Received signal {signum}, shutting down...", file=sys.stderr)
    raise KeyboardInterrupt


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augcl",
        description="Continual self-supervised learning with augmentation families as tasks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes:
  0  success (a report with incomplete cells still counts)
  2  invalid config or augmentation kind
  3  dataset missing or malformed
  4  corrupt or missing run logs

Examples:
  # Desk-scale MNIST run on 2 worker processes
  python main.py run --config configs/desk_mnist.json --parallel-runs 2

  # Curriculum sweep into one root directory
  python main.py run --config configs/desk_mnist.json --curriculum B1 --curriculum B2

  # Every MNIST augmentation family on its own
  python main.py single-aug --config configs/desk_mnist.json --kind all

  # Rebuild report.md / report.csv / negtransfer.csv
  python main.py report runs/desk_mnist
        """,
    )
    parser.add_argument("--env-file", type=str, help="Path to environment file (default: .env)")
    parser.add_argument("--verbose", action="store_true", help="Log every training step")

    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the CL vs MTL experiment")
    run.add_argument("--config", required=True, help="Experiment config file (JSON or YAML)")
    run.add_argument(
        "--parallel-runs", type=int, default=1, help="Seed-runs executed as parallel worker processes"
    )
    run.add_argument(
        "--curriculum",
        action="append",
        default=None,
        help="Curriculum id overriding the config; repeat for a sweep",
    )

    single = commands.add_parser("single-aug", help="Train and probe one augmentation family")
    single.add_argument("--config", required=True, help="Experiment config file (JSON or YAML)")
    single.add_argument(
        "--kind", action="append", required=True, help="Augmentation kind, or 'all'; may be repeated"
    )

    report = commands.add_parser("report", help="Regenerate reports from a run directory")
    report.add_argument("run_dir", help="Run directory (or curriculum sweep root)")
    return parser


def _print_report(report: RunReport) -> None:
    print(f"📄 Report: {report.run_dir / 'report.md'}")
    if report.missing_cells:
        print(f"⚠️  {len(report.missing_cells)} incomplete cell(s) flagged in the report")
    for failure in report.failures:
        print(f"  ❌ {failure}")


def cmd_run(args: argparse.Namespace, logger) -> int:
    config = load_experiment_config(args.config)
    if args.parallel_runs < 1:
        raise ConfigurationError("Invalid --parallel-runs", [f"parallel_runs: must be >= 1, got {args.parallel_runs}"])
    curricula = []
    for value in args.curriculum or []:
        try:
            curricula.append(get_curriculum(value))
        except ValueError as e:
            raise ConfigurationError("Invalid --curriculum", [f"curriculum: {e}"]) from e
    if len(curricula) == 1:
        config = config.with_curriculum(curricula[0])
        errors = config.validate()
        if errors:
            raise ConfigurationError("Invalid --curriculum", errors)

    data = load_experiment_data(config, EnvironmentConfig())
    if len(curricula) > 1:
        reports = run_sweep(config, curricula, data, args.parallel_runs)
        for report in reports:
            _print_report(report)
        logger.info("Sweep finished", curricula=len(reports))
        return EXIT_OK

    report = run_experiment(config, data, args.parallel_runs)
    _print_report(report)
    logger.info("Run finished", run_dir=str(report.run_dir), missing=len(report.missing_cells))
    return EXIT_OK


def cmd_single_aug(args: argparse.Namespace, logger) -> int:
    config = load_experiment_config(args.config)
    kinds = parse_kinds(args.kind, config.train.dataset)
    data = load_experiment_data(config, EnvironmentConfig())
    rows = run_single_augmentation(config, data, kinds)
    print(f"📄 Single-augmentation table: {config.run_dir / 'single_aug' / 'single_aug.md'} ({len(rows)} row(s))")
    logger.info("Single-augmentation runs finished", kinds=",".join(k.value for k in kinds), rows=len(rows))
    return EXIT_OK


def cmd_report(args: argparse.Namespace, logger) -> int:
    reports = regenerate_report(args.run_dir)
    for report in reports:
        _print_report(report)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "single-aug": cmd_single_aug,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, configure logging and dispatch; returns the exit status."""
    signal.signal(signal.SIGTERM, signal_handler)
    args = build_parser().parse_args(argv)

    if args.env_file:
        load_dotenv(args.env_file)
    else:
        load_dotenv()

    logging_config = LoggingConfig()
    if args.verbose:
        logging_config.log_level = "DEBUG"
    logger = setup_logger("src", logging_config)

    try:
        return COMMANDS[args.command](args, logger)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return EXIT_FAILURE
    except ConfigurationError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        for problem in e.errors:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except LogCorruptionError as e:
        print(f"Corrupt run log {e.path}: {e}", file=sys.stderr)
        return EXIT_LOG_CORRUPTION
    except BaseAugclError as e:
        logger.error(f"Error: {e}", exc_info=True)
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
