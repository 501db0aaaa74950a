# tessera/services/trials.py
"""
Trial pool: maps a per-trial function over trial indices.

Each trial derives its randomness from (master_seed, trial_index), so the
results do not depend on the number of workers or on scheduling order.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Any, Callable, Iterable, List

logger = logging.getLogger(__name__)


def run_trials(fn: Callable[..., Any], indices: Iterable[int], workers: int = 1, **kwargs: Any) -> List[Any]:
    """
    Run fn(trial_index, **kwargs) for every index.

    Args:
        fn: module-level (picklable) trial function
        indices: trial indices
        workers: process count; 1 runs in-process
        kwargs: fixed keyword arguments passed to every call

    Returns:
        Results in the order of `indices`
    """
    indices = list(indices)
    task = partial(fn, **kwargs)
    if workers <= 1 or len(indices) <= 1:
        return [task(i) for i in indices]
    logger.debug("running %d trials on %d workers", len(indices), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, indices, chunksize=max(1, len(indices) // (4 * workers))))
