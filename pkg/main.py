"""
Command-line entry point.

Global flags come before the subcommand:

    python main.py [--config FILE] [--seed N] [--jobs N] [--log-level LEVEL] <command> ...

Exit codes: 0 success, 1 internal error, 2 bad input or failed precondition.
"""
import argparse
import sys

from loguru import logger
from pydantic import ValidationError

from src.conf.config import Settings, load_settings
from src.routes import cluster, experiment, extract, featurize, synth, train_ae
from src.services.errors import PipelineError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icon-cluster", description="Icon-cluster features for PE malware detection")
    parser.add_argument("--config", default=None, help="dotenv-format settings file")
    parser.add_argument("--seed", type=int, default=None, help="overrides every seed")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes")
    parser.add_argument("--log-level", default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for route in (extract, featurize, train_ae, cluster, experiment, synth):
        route.register(subparsers)
    return parser


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Settings from ``--config`` (or the environment) with the command-line overrides applied."""
    settings = load_settings(args.config)
    if args.seed is not None:
        settings = settings.with_seed(args.seed)
    overrides = {}
    if args.jobs is not None:
        overrides["JOBS"] = args.jobs
    if args.log_level is not None:
        overrides["LOG_LEVEL"] = args.log_level
    if overrides:
        settings = Settings.model_validate(settings.model_dump() | overrides)
    return settings


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level="INFO")
    try:
        settings = resolve_settings(args)
    except (FileNotFoundError, ValidationError) as err:
        logger.error(f"invalid configuration: {err}")
        return EXIT_BAD_INPUT
    logger.remove()
    logger.add(sys.stderr, level=settings.LOG_LEVEL)

    try:
        return args.handler(args, settings)
    except PipelineError as err:
        logger.error(f"{args.command}: {err.detail}")
        return EXIT_BAD_INPUT
    except FileNotFoundError as err:
        logger.error(f"{args.command}: {err}")
        return EXIT_BAD_INPUT
    except Exception as err:
        logger.exception(f"{args.command}: unexpected error: {err}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
