"""
pegsim command line: single trials, scenario suites and the plateau experiment
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from errors import ConfigError, PegSimError
from harness import load_scene, load_suite, run_plateau_experiment, run_suite, run_trial, write_plateau_csv
from sim_config import SimConfig

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_INVALID = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pegsim", description="Peg-in-hole insertion simulator")
    parser.add_argument("--dt", type=float, default=None, help="physics step in seconds")
    parser.add_argument("--sensor-hz", type=float, default=None, help="controller / sensor rate")
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one trial")
    run.add_argument("--scene", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--log", default=None, help="per-sample CSV log path")

    suite = commands.add_parser("suite", help="run every scenario of a suite over a seed range")
    suite.add_argument("--suite", required=True)
    suite.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1")
    suite.add_argument("--out", required=True)
    suite.add_argument("--workers", type=int, default=1)

    plateau = commands.add_parser("plateau", help="virtual pusher against the grasp")
    plateau.add_argument("--scene", required=True)
    plateau.add_argument("--axis", choices=["x", "y", "z"], default="x")
    plateau.add_argument("--speed", type=float, default=3.0, help="pusher speed in mm/s")
    plateau.add_argument("--duration", type=float, default=12.0)
    plateau.add_argument("--trials", type=int, default=6)
    plateau.add_argument("--seed", type=int, default=0)
    plateau.add_argument("--out", required=True, help="CSV with t_s, mean_N, std_N")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = SimConfig.from_environment().with_overrides(args.dt, args.sensor_hz)
    except ConfigError as e:
        print(f"pegsim: {e}", file=sys.stderr)
        return EXIT_INVALID
    config.configure_logging(args.quiet)

    try:
        if args.command == "run":
            result = run_trial(load_scene(args.scene), args.seed, args.log, config=config)
            print(json.dumps(result.to_dict(), indent=2, default=float))
            return EXIT_OK if result.success else EXIT_FAILED

        if args.command == "suite":
            summary = run_suite(load_suite(args.suite), range(args.seeds), args.out, args.workers, config=config)
            print(f"summary written to {args.out}")
            return EXIT_OK if summary["all_as_expected"] else EXIT_FAILED

        result = run_plateau_experiment(load_scene(args.scene), args.axis, args.speed * 1e-3, args.duration,
                                        args.trials, args.seed, config)
        write_plateau_csv(result, args.out)
        print(f"plateau {result.plateau:.3f} N, rise R^2 {result.rise_r2:.4f}")
        return EXIT_OK
    except (PegSimError, ValueError) as e:
        logging.error(f"pegsim {args.command}: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
