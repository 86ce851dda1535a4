import argparse
import logging

from starsim.services.workloads import WorkloadGenerator, gen_workload, write_trace

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gen-trace", help="generate a synthetic workload trace")
    parser.add_argument("--workload", required=True, choices=WorkloadGenerator.WORKLOADS)
    parser.add_argument("--region-bytes", type=int, required=True)
    parser.add_argument("--ops", type=int, default=100_000, help="operations after initialization")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--mem-bytes", type=int, help="trace header size (default: region)")
    parser.add_argument(
        "--zipf-s", type=float, default=WorkloadGenerator.ZIPF_S, help="zipf exponent (zipf only)"
    )
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=gen_trace)


def gen_trace(args: argparse.Namespace) -> int:
    trace = gen_workload(
        args.workload, args.region_bytes, args.ops, args.seed, args.mem_bytes, zipf_s=args.zipf_s
    )
    write_trace(args.out, trace)
    logger.info("wrote %d events to %s", len(trace.events), args.out)
    return 0
