import argparse
import sys

from starsim.services.reporting import render_csv, report, write_csv, write_json


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("report", help="compare stats files, normalized to WB")
    parser.add_argument("stats", nargs="+", help="stats JSON files")
    parser.add_argument("--csv", help="CSV output path")
    parser.add_argument("--json", help="JSON output path")
    parser.set_defaults(handler=make_report)


def make_report(args: argparse.Namespace) -> int:
    rows = report(args.stats)
    if args.csv:
        write_csv(rows, args.csv)
    if args.json:
        write_json(rows, args.json)
    if not args.csv and not args.json:
        render_csv(rows, sys.stdout)
    return 0
