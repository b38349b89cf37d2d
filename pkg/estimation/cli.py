"""
Command-line entry point
Builds the argument parser, configures logging and maps errors to exit codes
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

import config
from estimation.exceptions import ConfigError, DataError, EstimationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4
EXIT_INTERRUPTED = 130


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure the root logger on stderr (plus LOG_FILE when set)"""
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, str(config.LOG_LEVEL).upper(), logging.INFO)

    handlers = [logging.StreamHandler(sys.stderr)]
    if config.LOG_FILE:
        handlers.append(logging.FileHandler(config.LOG_FILE, encoding="utf-8"))
    logging.basicConfig(level=level, format=config.LOG_FORMAT, handlers=handlers, force=True)
    logging.captureWarnings(True)


def _common_options() -> argparse.ArgumentParser:
    """Flags shared by every command; defaults are None so config files can fill them"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument("--workers", type=int, default=None, help="worker threads")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "markdown", "json"), default=None, help="output format")
    common.add_argument("--config", default=None, help="JSON file of option values")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    return common


def merge_options(args: argparse.Namespace, defaults: dict) -> dict:
    """
    Option values with precedence flags > --config file > defaults

    Raises:
        ConfigError: the config file has keys the command does not know
    """
    from utils.file_handler import load_json_config

    options = dict(defaults)
    if getattr(args, "config", None):
        from_file = load_json_config(args.config)
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {', '.join(sorted(unknown))}")
        options.update(from_file)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def build_parser() -> argparse.ArgumentParser:
    from estimation.commands import fit_commands, oracle_commands, simulate_commands

    parser = argparse.ArgumentParser(
        prog=config.APP_NAME,
        description="Control-function estimation for linear IV models with endogenous heteroskedasticity",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {config.VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    for module in (fit_commands, simulate_commands, oracle_commands):
        module.register(subparsers, common)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command

    Returns:
        exit code: 0 success, 2 configuration error, 3 data error,
        4 estimation error, 130 interrupted
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.verbose, args.quiet)
    args.progress = config.SHOW_PROGRESS and not args.quiet
    try:
        return args.handler(args) or EXIT_OK
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except EstimationError as e:
        logger.error(f"Estimation error: {e}")
        return EXIT_ESTIMATION
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
