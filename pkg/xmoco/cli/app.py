from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, NoReturn

import xmoco.cli.commands  # noqa: F401  # Registers the subcommands
from xmoco import __version__
from xmoco.cli.command_registry import CommandRegistry, get_command
from xmoco.cli.config import apply_overrides, apply_sections, load_config
from xmoco.constants import CommandID, ExitCode
from xmoco.errors import ConfigError, XmocoError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from xmoco.cli.config import RunConfig

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class UsageError(Exception):
    """Raised by the parser instead of exiting, so usage problems map to their exit code."""


class CliParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors by raising instead of exiting with status 2."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config with sections train, encoder_a, encoder_b, synth, ...")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config value (repeatable; the value is read as JSON)",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (logs go to standard error)",
    )
    return common


def build_parser() -> CliParser:
    """Build the parser with one subcommand per registered command."""
    parser = CliParser(prog="xmoco", description="Cross-modal contrastive retrieval with momentum encoders")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    common = _common_options()
    for command_id, command in CommandRegistry.items():
        sub = subparsers.add_parser(command_id.value, parents=[common], help=command.help, description=command.help)
        command.add_arguments(sub)
    return parser


def _flag_sections(flag_keys: dict[str, str], args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    sections: dict[str, dict[str, Any]] = {}
    for dest, target in flag_keys.items():
        value = getattr(args, dest, None)
        if value is not None:
            section, key = target.split(".", 1)
            sections.setdefault(section, {})[key] = value
    return sections


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge the config file, ``--set`` overrides and the subcommand's flags, then validate.

    Raises:
        ConfigError: On any invalid value.

    """
    command = CommandRegistry.get_command(CommandID(args.command))
    config = load_config(args.config)
    config = apply_overrides(config, args.overrides)
    config = apply_sections(config, _flag_sections(command.flag_keys, args))
    config.validate()
    return config


def configure_logging(level: str) -> None:
    """Send log records to standard error, leaving standard output to command results."""
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def run_cli(argv: Sequence[str] | None = None) -> int:
    """
    Parse arguments, run one subcommand and map failures to exit codes.

    Returns:
        int: 0 on success, 1 on a usage or configuration error, 2 on a runtime failure.

    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return ExitCode.USAGE
    except SystemExit as e:  # --help and --version
        return ExitCode.OK if e.code in (0, None) else ExitCode.USAGE

    configure_logging(args.log_level)
    try:
        config = resolve_config(args)
        get_command(CommandID(args.command), config).run(args)
    except ConfigError as e:
        LOGGER.error(f"Configuration error: {e}")  # noqa: TRY400
        return ExitCode.USAGE
    except (XmocoError, OSError) as e:
        LOGGER.error(f"{type(e).__name__}: {e}")  # noqa: TRY400
        return ExitCode.RUNTIME
    except Exception:
        LOGGER.exception(f"Unexpected failure in '{args.command}'")
        return ExitCode.RUNTIME
    return ExitCode.OK
