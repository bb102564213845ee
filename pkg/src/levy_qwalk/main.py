"""Main entry point for the levy-qwalk command line."""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import structlog
from pydantic import ValidationError

from levy_qwalk import __version__
from levy_qwalk.cli.commands import EXIT_OK, analyze_command, exit_code_for, run_command
from levy_qwalk.cli.files import load_manifest_file
from levy_qwalk.core.config import settings
from levy_qwalk.core.exceptions import ManifestError, WalkError
from levy_qwalk.core.logging import setup_logging
from levy_qwalk.models.schemas import (
    CoinAmplitudes,
    CoinConvention,
    CoinPreset,
    ExperimentManifest,
)

logger = structlog.get_logger()


def _comma_list(kind: type[int] | type[float]) -> Any:
    def parse(text: str) -> list[int] | list[float]:
        try:
            return [kind(item) for item in text.split(",") if item.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from e

    return parse


def build_parser() -> argparse.ArgumentParser:
    """Create the ``run`` / ``analyze`` argument parser."""
    parser = argparse.ArgumentParser(
        prog="levy-qwalk",
        description="Disorder-averaged quantum walks with truncated power-law step lengths",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    # Grid-defining flags are shared so analyze sees the grid that run wrote
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", type=Path, help="TOML experiment manifest")
    common.add_argument("--delta", type=_comma_list(float), help="delta value(s), comma list")
    common.add_argument("--lmax", type=_comma_list(int), help="lmax value(s), comma list")
    common.add_argument("--tmax", type=int, help="number of time steps")
    common.add_argument("--configs", type=int, help="disorder realizations per grid point")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--a0", type=float, help="initial amplitude on the right coin state")
    common.add_argument("--b0", type=float, help="initial amplitude on the left coin state")
    common.add_argument("--preset", choices=[p.value for p in CoinPreset])
    common.add_argument("--snapshots", type=_comma_list(int), help="profile times, comma list")
    common.add_argument("--convention", choices=[c.value for c in CoinConvention])
    common.add_argument("--out", type=Path, help="output directory")

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", parents=[common], help="simulate every grid point")
    run.add_argument("--workers", type=int, help="worker processes")
    analyze = commands.add_parser("analyze", parents=[common], help="fit the run outputs")
    analyze.add_argument("--gamma", type=float, help="collapse exponent")
    return parser


def manifest_from_args(args: argparse.Namespace) -> ExperimentManifest:
    """Load the manifest file, if any, and apply flag overrides."""
    data: dict[str, Any] = load_manifest_file(args.manifest) if args.manifest else {}
    run: dict[str, Any] = dict(data.get("run", {}))

    if args.delta:
        data["deltas"] = args.delta
    if args.lmax:
        data["lmaxes"] = args.lmax
    for flag, key in (
        ("tmax", "t_max"),
        ("configs", "n_config"),
        ("seed", "master_seed"),
        ("snapshots", "snapshot_times"),
        ("convention", "convention"),
        ("preset", "coin"),
    ):
        if getattr(args, flag) is not None:
            run[key] = getattr(args, flag)

    if (args.a0 is None) != (args.b0 is None):
        raise ManifestError("--a0 and --b0 must be given together")
    if args.a0 is not None:
        if args.preset is not None:
            raise ManifestError("--preset cannot be combined with --a0/--b0")
        try:
            coin = CoinAmplitudes.from_user_input(args.a0, args.b0)
        except (ValueError, ValidationError) as e:
            raise ManifestError(
                f"invalid coin amplitudes: {e}", {"a0": args.a0, "b0": args.b0}
            ) from e
        run["coin"] = coin.model_dump()

    data["run"] = run
    if args.out is not None:
        data["output_dir"] = args.out
    data.setdefault("output_dir", settings.OUTPUT_ROOT)
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers
    if getattr(args, "gamma", None) is not None:
        data["analysis"] = {**data.get("analysis", {}), "gamma": args.gamma}
    return ExperimentManifest.model_validate(data)


def cli(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the command and return the exit status."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger.info("Starting levy-qwalk", version=__version__, command=args.command)

    try:
        manifest = manifest_from_args(args)
        if args.command == "run":
            run_command(manifest, workers=args.workers)
        else:
            analyze_command(manifest)
    except ValidationError as e:
        errors = e.errors(include_url=False, include_context=False)
        logger.error("Invalid configuration", errors=errors)
        return exit_code_for(e)
    except WalkError as e:
        logger.error(e.message, error=type(e).__name__, details=e.details)
        return exit_code_for(e)
    return EXIT_OK


def main() -> None:
    """Console script entry point."""
    sys.exit(cli())


if __name__ == "__main__":
    main()
