"""``pyrankone`` command line: ``plan``, ``learn``, ``gen`` and ``check``.

Exit status is 0 on success, 1 on usage or validation errors and 2 on any
other failure, including failed invariant checks.
"""

import argparse
import logging
import sys

from ..mdp import MdpError, dump_mdp
from ..settings import BenchConfig, InvalidConfigError, SettingsError
from .checks import CHECKS, run_checks
from .runner import build_env, run_learning_suite, run_planning_suite

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(item) for item in text.split(",") if item]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float list {text!r}")


def _names(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _add_common(parser):
    parser.add_argument("--config", help="yaml or json settings file")
    parser.add_argument(
        "--env", choices=("garnet", "graph", "gridworld"), default=None
    )
    parser.add_argument(
        "--gamma",
        dest="gammas",
        type=_floats,
        help="comma separated discount factors",
    )
    parser.add_argument("--instances", type=int)
    parser.add_argument("--master-seed", dest="master_seed", type=int)
    parser.add_argument("--out", help="output path")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging"
    )


def _add_suite(parser):
    _add_common(parser)
    parser.add_argument(
        "--algos",
        dest="algorithms",
        type=_names,
        help="comma separated algorithm names",
    )
    parser.add_argument("--summary", help="summary CSV path")
    parser.add_argument("--threads", type=int)
    parser.add_argument(
        "--policy-values",
        dest="policy_values",
        action="store_true",
        default=None,
        help="record the value error of greedy policies",
    )
    parser.add_argument("--log-every", dest="log_every", type=int)
    parser.add_argument(
        "--no-progress",
        dest="progress",
        action="store_false",
        default=None,
    )


def build_parser():
    parser = _Parser(
        prog="pyrankone", description="Rank-one MDP solver benchmarks."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    plan = commands.add_parser("plan", help="planning threshold sweep")
    _add_suite(plan)
    plan.add_argument("--max-iters", dest="max_iters", type=int)
    plan.add_argument("--mpi-steps", dest="mpi_steps", type=int)
    plan.add_argument("--power-steps", dest="power_steps", type=int)

    learn = commands.add_parser("learn", help="learning error curves")
    _add_suite(learn)
    learn.add_argument("--seeds", type=int)
    learn.add_argument("--iters", type=int)

    gen = commands.add_parser("gen", help="write a model document")
    _add_common(gen)
    gen.add_argument("--instance", type=int, default=0)

    check = commands.add_parser("check", help="run the invariant suites")
    check.add_argument(
        "--master-seed", dest="master_seed", type=int, default=0
    )
    check.add_argument("--trials", type=int, default=20)
    check.add_argument("--only", type=_names, help="subset of checks")
    check.add_argument("-v", "--verbose", action="count", default=0)

    return parser


SETTING_FLAGS = (
    "env",
    "gammas",
    "instances",
    "seeds",
    "algorithms",
    "iters",
    "max_iters",
    "master_seed",
    "out",
    "summary",
    "threads",
    "policy_values",
    "log_every",
    "mpi_steps",
    "power_steps",
    "progress",
)


def load_config(args):
    """Config file overridden by the flags given on the command line."""
    overrides = {key: getattr(args, key, None) for key in SETTING_FLAGS}
    return BenchConfig(args.config, overrides)


def _gen(args):
    cfg = load_config(args)
    gamma = cfg.gammas[0]
    mdp = build_env(cfg, args.instance, gamma)
    dump_mdp(mdp, cfg.out)
    logger.info(f"Wrote {mdp!r} to {cfg.out}")


def _check(args):
    unknown = [name for name in args.only or () if name not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}")
    results = run_checks(args.master_seed, args.trials, args.only)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(
            f"{result.name:<26} {result.violation:.3e} "
            f"(tol {result.tolerance:.0e}) {status}"
        )
    return all(result.passed for result in results)


def main(argv=None):
    """Entry point; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "plan":
            run_planning_suite(load_config(args))
        elif args.command == "learn":
            run_learning_suite(load_config(args))
        elif args.command == "gen":
            _gen(args)
        elif not _check(args):
            return EXIT_FAILURE
    except (UsageError, SettingsError, InvalidConfigError, MdpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        logger.debug("Run failed", exc_info=True)
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
