from __future__ import annotations

import sys

from xmoco.cli import run_cli


def main() -> None:
    """Run the command line and exit with its status."""
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
