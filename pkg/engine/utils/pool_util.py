from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from engine.utils.config_util import load_config

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Ordered map over a process pool.

    Results come back in input order, so any reduction over them is the same
    for every worker count. `fn` must be a module-level callable (or a partial
    of one) so it can be pickled.
    """
    items = list(items)
    if workers is None:
        workers = load_config().workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
