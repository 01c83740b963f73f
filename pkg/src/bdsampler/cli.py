"""Command-line interface: seeded batch experiments from JSON configs.

Exit codes: 0 success, 2 configuration/validation error, 3 solver abort.
"""

import argparse
import sys

from .errors import ConfigError, SolverAbort
from .runner import load_config, preset_listing, run, validate_config


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bdsampler",
        description="Birth-death gradient-flow sampling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the JSON config")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
    run_p.add_argument("--replicates", type=int, default=None,
                       help="override the replicate count")

    sub.add_parser("presets", help="list presets with their defaults")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print(preset_listing())
        return 0
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.replicates is not None:
            overrides["replicates"] = args.replicates
        if overrides:
            config = validate_config({**config.as_dict(), **overrides})
        records = run(config, out_dir=args.out)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except SolverAbort as err:
        print(f"solver abort: {err}", file=sys.stderr)
        return 3
    for record in records:
        label = record.config.get("algorithm", record.config.get("preset", ""))
        print(f"completed {config.preset} {label}: "
              f"{len(record.replicates)} trajectory(ies), "
              f"wall clock {record.wall_clock:.1f}s")
        for key, val in sorted(record.summary.items()):
            print(f"  {key}: {val}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
