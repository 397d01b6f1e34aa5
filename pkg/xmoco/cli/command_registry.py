from __future__ import annotations

import logging
from typing import TYPE_CHECKING, ClassVar

from xmoco.errors import ConfigError

if TYPE_CHECKING:
    from xmoco.cli.commands import Command
    from xmoco.cli.config import RunConfig
    from xmoco.constants import CommandID

LOGGER = logging.getLogger(__name__)


class CommandRegistry:
    """
    Maps each ``xmoco`` subcommand id to the class that parses its options and runs it.

    Commands register themselves when :mod:`xmoco.cli.commands` is imported; the parser is built from
    :meth:`items`, so a subcommand exists exactly when it is registered.

    """

    _registry: ClassVar[dict[CommandID, type[Command]]] = {}

    @classmethod
    def register(cls, identifier: CommandID, command: type[Command]) -> None:
        """Register the class behind a subcommand."""
        cls._registry[identifier] = command

    @classmethod
    def get_command(cls, identifier: CommandID) -> type[Command]:
        """
        Look up the class behind a subcommand.

        Raises:
            ConfigError: If no class is registered for the id.

        """
        if identifier not in cls._registry:
            raise ConfigError(f"Unknown command: {identifier}")
        return cls._registry[identifier]

    @classmethod
    def items(cls) -> list[tuple[CommandID, type[Command]]]:
        """Get every registered subcommand, in registration order."""
        return list(cls._registry.items())


def get_command(identifier: CommandID, config: RunConfig) -> Command:
    """Instantiate a subcommand against the run configuration it will use."""
    LOGGER.debug(f"Getting class for command: {identifier.value}")
    return CommandRegistry.get_command(identifier)(config)
