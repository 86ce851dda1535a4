import argparse
import logging
import sys
from pathlib import Path

from starsim.commands.options import add_settings_arguments, settings_from_args
from starsim.errors import ConfigError, RecoveryFailure
from starsim.schemas.stats import Stats
from starsim.services.simulator import Simulator, differential_check
from starsim.services.workloads import read_trace

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    run = subparsers.add_parser("run", help="replay a trace through one scheme")
    _add_common(run)
    run.set_defaults(handler=run_trace)

    crash = subparsers.add_parser(
        "crash-test", help="crash, recover and check against an uncrashed run"
    )
    _add_common(crash)
    crash.set_defaults(handler=crash_test)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("trace", help="trace file")
    parser.add_argument("--crash-at", type=int, help="crash after event K and recover")
    parser.add_argument("--crash-random", type=int, default=0, metavar="N",
                        help="crash-and-recover at N random events")
    parser.add_argument("--out", help="stats JSON path (default: stdout)")
    add_settings_arguments(parser)


def emit(stats: Stats, out: str | None) -> None:
    payload = stats.model_dump_json(indent=2)
    if out:
        Path(out).write_text(payload + "\n", encoding="utf-8")
    else:
        sys.stdout.write(payload + "\n")


def run_trace(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    trace = read_trace(args.trace)
    simulator = Simulator(settings, trace.name)
    stats, _ = simulator.run(trace, crash_at=args.crash_at, crash_random=args.crash_random)
    emit(stats, args.out)
    if stats.recovery is not None and not stats.recovery.verified:
        raise RecoveryFailure(stats.recovery.detail or "recovery failed", stats.recovery)
    if simulator.failures:
        raise RecoveryFailure(simulator.failures[0])
    return 0


def crash_test(args: argparse.Namespace) -> int:
    """
    Random crash points are recovered and audited in place; a crash at K is
    additionally resumed and compared with an uncrashed run of the same trace.
    """
    if not args.crash_at and not args.crash_random:
        raise ConfigError("crash-test needs --crash-at or --crash-random")
    settings = settings_from_args(args)
    trace = read_trace(args.trace)
    problems: list[str] = []

    if args.crash_random:
        simulator = Simulator(settings, trace.name)
        stats, _ = simulator.run(trace, crash_random=args.crash_random)
        emit(stats, args.out)
        problems.extend(simulator.failures)
    if args.crash_at:
        problems.extend(differential_check(settings, trace, args.crash_at))

    for problem in problems:
        logger.error("crash test: %s", problem)
    if problems:
        raise RecoveryFailure(f"{len(problems)} crash-test failures; first: {problems[0]}")
    logger.info("crash test passed")
    return 0
