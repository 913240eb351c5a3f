import logging
import sys
from argparse import ArgumentParser, Namespace
from typing import List

import voluptuous as vo

from weakkam import __version__
from weakkam.log import initlog
from weakkam.scripts import run_stages
from weakkam.stages import ORDER

logger = logging.getLogger("weakkam.cli")

# subcommand -> stages it asks for; requirements are added by the planner
COMMANDS = {
    "solve": ("solve",),
    "regularize": ("regularize",),
    "aubry": ("aubry",),
    "attractor": ("attractor", "lyapunov"),
    "rate": ("rate",),
    "check": ORDER,
}


def parse_args(input: List[str]) -> Namespace:
    """Parse command line arguments.

    Parameters
    ----------
    input
        list of command line arguments

    Returns
    -------
    parsed arguments
    """
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", required=False, help="experiment YAML file")
    common.add_argument("--out", required=False, help="output directory")
    common.add_argument("--n", type=int, required=False, help="grid points per axis")
    common.add_argument("--dt", type=float, required=False, help="semigroup time step")
    common.add_argument("--lambda", dest="lam", type=float, required=False, help="discount rate")

    parser = ArgumentParser(prog="weakkam")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers()

    for name, targets in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common])
        sub.set_defaults(func=run_stages, targets=targets)

    args = parser.parse_args(input)
    if not hasattr(args, "func"):
        parser.print_help()

    return args


def main(argv: List[str] = None) -> int:
    """Main entry point for weakkam.

    Invoke the command line help with::

        $ weakkam --help

    """
    initlog("cli")

    args = parse_args(sys.argv[1:] if argv is None else argv)

    if not hasattr(args, "func"):
        return 2
    try:
        return args.func(args)
    except vo.Invalid as e:
        logger.error("Invalid configuration: %s", e)
        return 2
    except Exception as e:  # noqa
        logger.critical("weakkam %s failed: %s", args.targets[-1], e)
        return 1
