"""
Command line entry point.

    pmlab run --config scenario.pm [--out DIR] [--jobs N] [--seed-override S]
    pmlab random --count N --seed S [--max-states 8] [--max-atoms 4]
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import CheckFailure
from .runner import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, randomized_suite, run_scenario


logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(prog="pmlab", description="Pseudo-marginal MCMC verification lab")
    parser.add_argument("--version", action="version", version="pmlab %s" % __version__)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiments of a scenario file")
    run.add_argument("--config", required=True, help="scenario file")
    run.add_argument("--out", help="output directory (default: the scenario's output_dir)")
    run.add_argument("--jobs", type=int, default=1, help="experiments run in parallel")
    run.add_argument("--seed-override", type=int, help="replace the scenario seed")
    run.add_argument("--verbose", action="store_true")

    random = commands.add_parser("random", help="ordering checks on random finite instances")
    random.add_argument("--count", type=int, required=True)
    random.add_argument("--seed", type=int, required=True)
    random.add_argument("--max-states", type=int, default=8)
    random.add_argument("--max-atoms", type=int, default=4)
    random.add_argument("--jobs", type=int, default=1)
    random.add_argument("--constant", action="store_true", help="use constant weights")
    random.add_argument("--out", help="directory for report.json (default: stdout)")
    random.add_argument("--verbose", action="store_true")
    return parser


def _random(args):
    try:
        report = randomized_suite(args.count, max_states=args.max_states, max_atoms=args.max_atoms,
                                  seed=args.seed, jobs=args.jobs, constant=args.constant)
    except CheckFailure as failure:
        logger.error("%s", failure)
        report = {"status": "violation", "message": str(failure), "instance": failure.instance}
        status = EXIT_VIOLATION
    except ValueError as error:
        logger.error("%s", error)
        return EXIT_ERROR
    else:
        status = EXIT_OK
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if args.out is None:
        print(text)
        return status
    try:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as handle:
            handle.write(text + "\n")
    except OSError as error:
        logger.error("cannot write report to %s: %s", args.out, error)
        return EXIT_ERROR
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "run":
        return run_scenario(args.config, out=args.out, jobs=args.jobs, seed_override=args.seed_override)
    return _random(args)


if __name__ == "__main__":
    sys.exit(main())
