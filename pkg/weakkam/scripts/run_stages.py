import logging
from argparse import Namespace

from weakkam.config import dump_config, load_experiment
from weakkam.log import initlog
from weakkam.suite import Suite

logger = logging.getLogger("weakkam.cli")


def run_stages(args: Namespace) -> int:
    """Run the suite stages selected by a subcommand.

    Parameters
    ----------
    args
        Argparse namespace with the global flags and ``targets``.

    Returns
    -------
    process exit status
    """
    overrides = {"n": args.n, "dt": args.dt, "lam": args.lam, "out": args.out}
    cfg = load_experiment(args.config, overrides)
    initlog("suite", level=cfg.loglevel)

    suite = Suite(cfg, args.targets)
    suite.ctx.out.mkdir(parents=True, exist_ok=True)
    suite.ctx.path("config.yaml").write_text(dump_config(cfg))
    logger.info("Running %s into %s", ", ".join(suite.stages), suite.ctx.out)

    try:
        status = suite.run()
    except Exception as e:  # noqa
        logger.critical("Error running the suite : %s", e, exc_info=True)
        raise

    logger.info("Suite run ended with status %s.", status)
    return suite.exit_code
