#!/usr/bin/env python3
# PYTHON_ARGCOMPLETE_OK

# pylint: disable=missing-docstring
# pylint: disable=invalid-name

import argparse
import logging
import sys
from typing import List, Optional

from rfncsc.common import RfnCscError
from rfncsc.config import PRESETS, loadConfig, resolveThreads
from rfncsc.logger import levelFromVerbosity, setupLogging
from rfncsc.run import BENCH_SUITES, Runner

_logger = logging.getLogger(__name__)


def _buildParser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfncsc",
        description="Convolutional sparse coding with receptive field normalization",
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="append_const",
        const=1,
        help="Increases verbosity. Passing multiple times progressively increases verbosity",
    )
    parser.add_argument("--config", action="store", help="Experiment config (JSON)")
    parser.add_argument(
        "--preset",
        action="store",
        default="default",
        choices=sorted(PRESETS),
        help="Base settings the config file is applied on top of",
    )
    parser.add_argument("--seed", action="store", type=int, help="Overrides synth.seed")
    parser.add_argument(
        "--threads",
        action="store",
        type=int,
        help="Worker threads, defaults to $RFNCSC_THREADS or 1",
    )
    parser.add_argument("--no-color", action="store_true", help="Plain log output")
    parser.add_argument(
        "--log-file", action="store", help="Appends the log to this file instead of stderr"
    )

    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    synth = commands.add_parser("synth", help="Generate reflectivity and traces")
    synth.add_argument("--out", required=True, help="Output prefix")

    solve = commands.add_parser("solve", help="Solve every trace of an image")
    solve.add_argument("traces", help="Trace matrix file with the data image")
    solve.add_argument("--out", required=True, help="Output prefix")
    solve.add_argument("--solver", help="rfn-ita, support-detect, ista or unrolled")
    solve.add_argument("--truth", help="True reflectivity, enables scores")
    solve.add_argument("--dict", dest="dict_path", help="Dictionary matrix file")

    bench = commands.add_parser("bench", help="Run an experiment suite to CSV")
    bench.add_argument("suite", choices=BENCH_SUITES)
    bench.add_argument("--out", required=True, help="CSV output path")
    bench.add_argument("--channels", type=int, help="Overrides the channel count")

    check = commands.add_parser("check", help="Evaluate a support recovery condition")
    check.add_argument("reflectivity", help="Trace matrix file with the code image")
    check.add_argument("--theorem", type=int, choices=(1, 2, 3), required=True)
    check.add_argument("--column", type=int, default=0)
    check.add_argument("--eps-d", type=float, default=0.0, help="Noise stripe norm")
    check.add_argument("--tau", type=float, help="Clip level, defaults to solver.taus[0]")
    check.add_argument("--nu", type=float, help="Separation constant for theorem 3")
    check.add_argument("--out", help="JSON report path")

    qdict = commands.add_parser("qdict", help="Build a time variant Q dictionary")
    qdict.add_argument("--q", type=float, help="Quality factor, omitted means no attenuation")
    qdict.add_argument("--n-x", type=int, help="Number of columns")
    qdict.add_argument("--out", required=True, help="Trace matrix output path")

    commands.add_parser("info", help="Describe the configured dictionary")

    return parser


def _parseArgs(argv: Optional[List[str]] = None):
    "Parse command line arguments"
    parser = _buildParser()

    try:
        import argcomplete  # type: ignore

        argcomplete.autocomplete(parser)
    except ImportError:  # pragma: no cover
        pass

    args = parser.parse_args(argv)

    level = levelFromVerbosity(len(args.verbose or []))
    try:
        setupLogging(args.log_file or sys.stderr, level, not args.no_color)
    except OSError as exc:
        parser.error(f"Cannot open log file: {exc}")
    globals()["_logger"] = logging.getLogger(__name__)

    return args


def _dispatch(runner: Runner, args) -> int:
    if args.command == "synth":
        runner.cmdSynth(args.out)
    elif args.command == "solve":
        runner.cmdSolve(args.traces, args.out, args.solver, args.truth, args.dict_path)
    elif args.command == "bench":
        runner.cmdBench(args.suite, args.out, args.channels)
    elif args.command == "check":
        report = runner.cmdCheck(
            args.reflectivity,
            args.theorem,
            args.out,
            args.column,
            args.eps_d,
            args.tau,
            args.nu,
        )
        return 0 if report.condition_holds else 1
    elif args.command == "qdict":
        runner.cmdQdict(args.out, args.q, args.n_x)
    else:
        runner.info()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = _parseArgs(argv)
    try:
        config = loadConfig(args.config, args.seed, args.preset)
        runner = Runner(config, resolveThreads(args.threads))
        return _dispatch(runner, args)
    except RfnCscError as exc:
        _logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
