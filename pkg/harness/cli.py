"""Command line entry point: ``inexact-sp run|validate|spectrum|gen``."""

from __future__ import annotations

import argparse
import logging
import sys

from harness.config import ConfigError, parse_config, parse_recipe
from harness.runner import run_experiment, spectrum_report
from utils.container import export_instance
from utils.formatters import format_error, format_rate, format_seconds, format_verdict
from utils.problems import build_instance

logger = logging.getLogger(__name__)


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="TOML experiment config")
    parser.add_argument("--tol", type=float, help="relative error tolerance")
    parser.add_argument("--omega", type=float, help="stepsize in (0, 2)")
    parser.add_argument("--max-iters", dest="max_iters", type=int)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--d", type=int, help="sketch block size")
    parser.add_argument("--r", type=int, help="inner solver iterations")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--output-dir", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inexact-sp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_overrides(commands.add_parser("run", help="run the configured trials"))
    _add_overrides(commands.add_parser("validate", help="run trials and check them against the rate certificate"))
    _add_overrides(commands.add_parser("spectrum", help="print lambda_min_plus, lambda_max and a rho table"))

    gen = commands.add_parser("gen", help="write a problem instance file")
    gen.add_argument("recipe", help="TOML file with seed and a [problem] table")
    gen.add_argument("out", help="instance file to write")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("tol", "omega", "max_iters", "trials", "seed", "d", "r", "workers", "output_dir")
    return {key: getattr(args, key) for key in keys}


def _run(args: argparse.Namespace, *, validate: bool) -> int:
    cfg = parse_config(args.config, _overrides(args))
    result = run_experiment(cfg, validate=validate)
    summary = result.summary
    print(f"{cfg.name}: {summary['trials']} trial(s), terminations {summary['terminations']}")
    print(f"  mean iterations   {summary['mean_iterations']:.1f}")
    print(f"  median iterations {summary['median_iterations']:.1f}")
    print(f"  wall clock        {format_seconds(summary['total_wall_clock_s'])} ({result.summary['wall_clock_note']})")
    if validate:
        print(f"  certificate       {format_verdict(summary['validation'])}")
    print(f"  trace             {result.trace_path}")
    return result.exit_status


def _spectrum(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config, _overrides(args))
    summary, table = spectrum_report(cfg)
    source = "exact enumeration" if summary.exact else f"Monte-Carlo, {summary.n_samples} samples"
    print(f"lambda_min_plus {format_error(summary.lambda_min_plus, 6)} ({source})")
    print(f"lambda_max      {format_error(summary.lambda_max, 6)}")
    print(f"rank of E[Z]    {summary.rank}")
    if summary.standard_error is not None:
        print(f"std. error      {format_error(summary.standard_error)}")
    print()
    print(f"{'omega':>6}  rho")
    for omega, rho in table.itertuples(index=False):
        print(f"{omega:6.2f}  {format_rate(rho)}")
    return 0


def _gen(args: argparse.Namespace) -> int:
    recipe = parse_recipe(args.recipe)
    instance = build_instance(recipe)
    export_instance(instance, args.out)
    logger.info("Wrote %s (%d x %d) to %s", instance.label, instance.m, instance.n, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        match args.command:
            case "run":
                return _run(args, validate=False)
            case "validate":
                return _run(args, validate=True)
            case "spectrum":
                return _spectrum(args)
            case "gen":
                return _gen(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("Unhandled failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
