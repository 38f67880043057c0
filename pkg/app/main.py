"""
Adaptive Scooping Simulator Main Module

This module serves as the entry point of the command-line tool. It configures
logging, builds the argument parser from the command modules and maps
application errors to exit codes.

Exit codes:
    0: success
    1: a ScoopingError, ValueError or OSError raised while running a command
    2: usage error (unknown subcommand, bad arguments)
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.api.commands import COMMAND_MODULES
from app.config import ProjectSettings, load_settings
from app.core.dependencies import get_services
from app.exceptions import ConfigurationError, ScoopingError


# Configure application-wide logging
# Sets up structured logging with timestamp, logger name, and log level
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def _set_log_level(name: str) -> None:
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ConfigurationError(f"Unknown log level '{name}'")
    logging.getLogger().setLevel(level)


def create_application() -> argparse.ArgumentParser:
    """
    Create and configure the command-line parser.

    Returns:
        argparse.ArgumentParser: Parser with every subcommand registered
    """
    parser = argparse.ArgumentParser(
        prog="codega",
        description="Simulate, train and evaluate adaptive scooping policies on granular terrain",
    )
    project = ProjectSettings()
    parser.add_argument("--version", action="version", version=f"{project.PROJECT_NAME} {project.VERSION}")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (default 0)")
    parser.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    parser.add_argument("--log-level", default=None, help="Logging level (default: PROJECT_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one CLI command.

    Args:
        argv (List[str], optional): Arguments without the program name; sys.argv when omitted

    Returns:
        int: Process exit code
    """
    parser = create_application()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        return 2

    settings = None
    try:
        settings = load_settings(args.config)
        _set_log_level(args.log_level or settings.project.LOG_LEVEL)
        services = get_services(settings, seed=args.seed or 0)
        return args.handler(args, services)
    except (ScoopingError, ValueError, OSError) as e:
        if settings is not None and settings.project.DEBUG:
            logger.exception("Command failed")
        else:
            logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        for detail in getattr(e, "details", []):
            print(f"  {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
