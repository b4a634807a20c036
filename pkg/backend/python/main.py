"""
Main entry point for the delay bandits experiments
"""

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from delay_bandits import settings
from delay_bandits.errors import ConfigError, DelayBanditError
from delay_bandits.harness import audit, load_config, load_sweep, run_sweep, spanner_check

logger = logging.getLogger("delay_bandits.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def parse_args(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description='Delay-as-payoff linear bandit experiments')
    parser.add_argument('--log-level', type=str, default=settings.LOG_LEVEL,
                        help='Logging level (DEBUG, INFO, WARNING, ...)')
    commands = parser.add_subparsers(dest='command', required=True)

    # Sweeps
    run = commands.add_parser('run', help='Run every (algorithm, seed) pair of a config')
    run.add_argument('--config', type=str, required=True,
                     help='Path to the JSON experiment config')
    run.add_argument('--out', type=str, default=None,
                     help='Output directory (overrides outputDir)')
    run.add_argument('--jobs', type=int, default=None,
                     help='Worker processes')
    run.add_argument('--downsample', type=int, default=1,
                     help='Keep every n-th round in traces and aggregates')
    run.add_argument('--no-progress', action='store_true',
                     help='Hide the progress bar')

    summary = commands.add_parser('summarize', help='Print the final-regret table of a sweep')
    summary.add_argument('--in', dest='in_dir', type=str, required=True,
                         help='Sweep output directory')

    check = commands.add_parser('audit', help='Recompute aggregates from traces and check them')
    check.add_argument('--in', dest='in_dir', type=str, required=True,
                       help='Sweep output directory')

    # Instances
    spanner = commands.add_parser('spanner-check', help='Certify the spanner of a saved instance')
    spanner.add_argument('--instance', type=str, required=True,
                         help='Path to an instance JSON file')
    spanner.add_argument('--budget', type=int, default=None,
                         help='Spanner size budget (default 3n)')

    return parser.parse_args(argv)


def _print_summary(result) -> None:
    print(result.table.table.to_string(index=False))
    for verdict in result.table.verdicts:
        print(f"{verdict['better']} < {verdict['worse']}: {verdict['verdict']}")


def dispatch(args) -> int:
    if args.command == 'run':
        config = load_config(args.config)
        result = run_sweep(config, output_dir=args.out, jobs=args.jobs,
                           downsample=args.downsample, progress=not args.no_progress)
        _print_summary(result)
        return EXIT_OK

    if args.command == 'summarize':
        _print_summary(load_sweep(args.in_dir))
        return EXIT_OK

    if args.command == 'audit':
        report = audit(args.in_dir)
        print(f"Traces checked: {report.traces}")
        print(f"Max aggregate difference: {report.max_aggregate_diff:.3e}")
        for problem in report.problems:
            print(f"  {problem}")
        return EXIT_OK if report.ok else EXIT_RUNTIME

    if args.command == 'spanner-check':
        print(json.dumps(spanner_check(args.instance, args.budget), indent=2))
        return EXIT_OK

    raise ConfigError(f"Unknown command {args.command}")


def main(argv=None) -> int:
    """Main entry point"""
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=settings.LOG_FORMAT)

    try:
        return dispatch(args)
    except (ValidationError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except DelayBanditError as exc:
        logger.exception(f"Run failed: {exc}")
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception(f"Unexpected error: {exc}")
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
