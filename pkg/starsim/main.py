import argparse
import logging
import sys

from starsim import __version__
from starsim.commands import register_report, register_run, register_trace
from starsim.errors import StarError

logger = logging.getLogger("starsim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starsim",
        description="Trace-driven simulator of secure NVM metadata persistence and recovery",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Command groups
    register_trace(subparsers)
    register_run(subparsers)
    register_report(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except StarError as exc:
        logger.error("%s", exc.detail)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
