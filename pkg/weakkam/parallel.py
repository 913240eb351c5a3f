import logging
from typing import Callable, Iterable, List

from loky import ProcessPoolExecutor

logger = logging.getLogger("weakkam.parallel")


def parallel_map(func: Callable, items: Iterable, workers: int = 1) -> List:
    """Map ``func`` over ``items`` on a loky process pool.

    Results come back in input order. With ``workers <= 1`` everything runs
    inline, which keeps single-process runs free of pool start-up.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    nworkers = min(workers, len(items))
    logger.debug("Dispatching %d tasks to %d workers", len(items), nworkers)
    with ProcessPoolExecutor(max_workers=nworkers) as executor:
        return list(executor.map(func, items))
