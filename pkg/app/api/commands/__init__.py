"""
CLI command modules.

Each module exposes `register(subparsers)`, which adds its subcommands and
binds a `handler(args, services) -> int` to each of them.
"""

from app.api.commands import experiment, terrain, training

COMMAND_MODULES = (terrain, training, experiment)
