"""
Command-Line Interface

    python -m pnbounds sweep --config configs/snr_fro.cfg --out snr_fro.csv
    python -m pnbounds show-config --config configs/range_fro.cfg
    python -m pnbounds validate

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from pnbounds import __version__
from pnbounds.config import BoundRequest, SweepSpec, default_spec, load_config
from pnbounds.errors import ConfigError, ModelValidityError, NumericalError
from pnbounds.experiments import FAMILY_COLUMNS, emit_results, run_sweep
from pnbounds.utils import configure_logging, print_config_summary, print_sweep_summary, resolve_jobs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parse_families(value: str) -> List[BoundRequest]:
    try:
        return [BoundRequest(item.strip()) for item in value.split(",") if item.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(
            f"{err}; choose from {', '.join(f.value for f in BoundRequest)}"
        ) from err


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {value}")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnbounds",
        description="Accuracy bounds for OFDM radar under oscillator phase noise",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None,
                        help="Logging level (default: $PNBOUNDS_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="Run one experiment sweep and write results")
    sweep.add_argument("--config", "-c", type=str, default=None, help="Config file")
    sweep.add_argument("--out", "-o", type=str, default=None,
                       help="Output file (default: results.<format>)")
    sweep.add_argument("--format", choices=("csv", "json"), default="csv")
    sweep.add_argument("--seed", type=_seed, default=None, help="Master seed override")
    sweep.add_argument("--families", type=_parse_families, default=None,
                       help="Comma list of crb_free,crb,crb_dp,lb")
    sweep.add_argument("--jobs", "-j", type=int, default=None,
                       help="Worker processes (default: $PNBOUNDS_JOBS or 1)")
    sweep.add_argument("--quiet", "-q", action="store_true",
                       help="No progress bar or summary table")

    validate = sub.add_parser("validate", help="Run the slow Monte-Carlo oracle tests")
    validate.add_argument("pytest_args", nargs="*", help="Extra arguments passed to pytest")

    show = sub.add_parser("show-config", help="Print the resolved configuration")
    show.add_argument("--config", "-c", type=str, default=None, help="Config file")
    return parser


def _resolve_spec(config_path: Optional[str]) -> SweepSpec:
    return load_config(config_path) if config_path else default_spec()


def run_sweep_command(args: argparse.Namespace) -> int:
    try:
        spec = _resolve_spec(args.config)
    except (ConfigError, ModelValidityError) as err:
        logger.error(f"Configuration error: {err}")
        return EXIT_CONFIG
    spec = spec.with_overrides(seed=args.seed, families=args.families)

    out = Path(args.out or f"results.{args.format}")
    try:
        rows = run_sweep(spec, jobs=resolve_jobs(args.jobs), show_progress=not args.quiet)
    except NumericalError as err:
        logger.error(f"Numerical failure: {err}")
        return EXIT_NUMERICAL

    try:
        emit_results(rows, args.format, out, spec)
    except OSError as err:
        logger.error(f"Cannot write results to {out}: {err}")
        return EXIT_CONFIG

    if not args.quiet:
        columns = [c for f in spec.families for c in FAMILY_COLUMNS[f]]
        records = [row.to_record(["axis_value", *columns, "status"]) for row in rows]
        print_sweep_summary(spec.axis.value, records, columns, str(out))

    failed = [row for row in rows if row.status.startswith("error:")]
    if failed:
        logger.error(f"{len(failed)} of {len(rows)} sweep points failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def run_validate_command(args: argparse.Namespace) -> int:
    import pytest

    tests_dir = Path(__file__).resolve().parent / "tests"
    return int(pytest.main([str(tests_dir), "-m", "slow", *args.pytest_args]))


def run_show_config_command(args: argparse.Namespace) -> int:
    try:
        spec = _resolve_spec(args.config)
    except (ConfigError, ModelValidityError) as err:
        logger.error(f"Configuration error: {err}")
        return EXIT_CONFIG
    print_config_summary(spec.to_flat_lines())
    print(f"config_sha256 = {spec.digest}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
    except ValueError as err:
        parser.error(str(err))

    commands = {
        "sweep": run_sweep_command,
        "validate": run_validate_command,
        "show-config": run_show_config_command,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
