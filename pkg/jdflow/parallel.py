"""Ordered map over independent work items.

Results always come back in input order and callers reduce them in that order,
so the thread count never changes a result.
"""

from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from typing import Callable, Iterable, List, TypeVar

import psutil

from jdflow.errors import ArgumentError

_T = TypeVar("_T")
_R = TypeVar("_R")

_logger = getLogger(__name__)


def resolve_threads(threads: int) -> int:
    """0 means one thread per logical CPU."""
    if threads < 0:
        raise ArgumentError(f"threads must be >= 0, got {threads!r}")
    if threads == 0:
        return psutil.cpu_count() or 1

    return threads


def ordered_map(fn: Callable[[_T], _R], items: Iterable[_T], threads: int = 1) -> List[_R]:
    items = list(items)
    n_threads = resolve_threads(threads)
    if n_threads == 1 or len(items) < 2:
        return [fn(item) for item in items]

    _logger.debug(f"ordered_map: {len(items)=} {n_threads=}")
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, items))
