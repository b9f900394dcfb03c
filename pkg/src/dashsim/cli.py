"""``dashsim`` command line: run the experiments and write CSV tables."""

from __future__ import annotations

import argparse
import sys

from . import netem, scenario_runner
from .media_catalog import CatalogError, build_default_catalog, load_catalog
from .scenario_runner import Experiment, ScenarioError, ScenarioSpec
from .transport import ALL_STACKS, StackKind

STACK_CHOICES = [k.value for k in ALL_STACKS] + ["all"]


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _rtt_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated milliseconds, got {text!r}") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("rtt list must be non-empty and >= 0")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dashsim",
        description="Simulate adaptive streaming over HTTP/2, SSL and QUIC stacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stack", choices=STACK_CHOICES, default="all",
                        help="protocol stack to run (default: all)")
    common.add_argument("--format", choices=["csv"], default="csv", help="output format")
    common.add_argument("--out", help="directory for the CSV files; the main table also goes to stdout")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--rtt", type=_rtt_list, help="round-trip times in ms, e.g. 0,50,150")
    sim.add_argument("--catalog", help="representation catalog file")
    sim.add_argument("--seeds", type=_int_list, default=scenario_runner.DEFAULT_SEEDS,
                     help="seeds, e.g. 1,2,3,4,5 (default)")
    sim.add_argument("--segments", type=int, help="segments per session (default depends on experiment)")
    sim.add_argument("--dump-packets", action="store_true", help="also write per-packet CSV for every run")

    sub.add_parser("overhead", parents=[common, sim], help="protocol overhead per representation")
    sub.add_parser("utilization", parents=[common, sim], help="link utilization per RTT and representation")
    p = sub.add_parser("adaptation", parents=[common, sim], help="adaptive sessions against a trajectory")
    p.add_argument("--trajectory", help="bandwidth trajectory file (default: bundled)")
    sub.add_parser("table2", parents=[common], help="per-packet header overhead of each stack")
    return parser


def _stacks(name: str) -> tuple[StackKind, ...]:
    return ALL_STACKS if name == "all" else (StackKind.parse(name),)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "table2":
            result = scenario_runner.table2(_stacks(args.stack))
        else:
            catalog = load_catalog(args.catalog) if args.catalog else build_default_catalog()
            trajectory = None
            if getattr(args, "trajectory", None):
                trajectory = netem.load_trajectory(args.trajectory)
            spec = ScenarioSpec(
                Experiment(args.command),
                stacks=_stacks(args.stack),
                rtts_ms=args.rtt,
                trajectory=trajectory,
                seeds=args.seeds,
                catalog=catalog,
                segment_count=args.segments,
                dump_packets=args.dump_packets,
            )
            result = scenario_runner.run(spec)
        if args.out:
            written = scenario_runner.write_tables(result, args.out)
            print(f"dashsim: wrote {len(written)} files to {args.out}", file=sys.stderr)
        sys.stdout.write(result.to_csv())
    except (ScenarioError, CatalogError, netem.TrajectoryError, ValueError, OSError) as exc:
        print(f"dashsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
