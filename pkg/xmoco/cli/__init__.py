from xmoco.cli.app import build_parser, run_cli
from xmoco.cli.commands import Command
from xmoco.cli.config import RunConfig, load_config
from xmoco.cli.service import EmbeddingService, make_server

__all__ = ["Command", "EmbeddingService", "RunConfig", "build_parser", "load_config", "make_server", "run_cli"]
