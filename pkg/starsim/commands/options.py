import argparse

from starsim.config import Settings, load_settings


def add_settings_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags that override keys of the config file."""
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", help="key=value config file")
    group.add_argument("--mem-bytes", type=int)
    group.add_argument("--scheme", choices=["wb", "strict", "anubis", "star"])
    group.add_argument("--aw-mode", choices=["aw-l", "aw-m", "aw-h"])
    group.add_argument("--fresh-victim-policy", choices=["writeback", "discard"])
    group.add_argument("--counter-cache-bytes", type=int)
    group.add_argument("--sit-cache-bytes", type=int)
    group.add_argument("--ways", type=int)
    group.add_argument("--adr-lines", type=int)
    group.add_argument("--adr-l2-lines", type=int)
    group.add_argument("--seed", type=int)
    group.add_argument("--read-ns", type=int)
    group.add_argument("--shadow-checks", action="store_true", default=None)


def settings_from_args(args: argparse.Namespace) -> Settings:
    return load_settings(
        args.config,
        mem_bytes=args.mem_bytes,
        scheme=args.scheme,
        aw_mode=args.aw_mode,
        fresh_victim_policy=args.fresh_victim_policy,
        counter_cache_bytes=args.counter_cache_bytes,
        sit_cache_bytes=args.sit_cache_bytes,
        ways=args.ways,
        adr_lines=args.adr_lines,
        adr_l2_lines=args.adr_l2_lines,
        seed=args.seed,
        read_ns=args.read_ns,
        shadow_checks=args.shadow_checks,
    )
