"""Ordered worker-pool helpers.

Work is split into chunks, chunks run on a thread pool, and results come back in
input order so every reduction downstream is independent of the worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "MONODRIFT_WORKERS"

_workers: Optional[int] = None


def set_default_workers(workers: Optional[int]) -> None:
    """Set the process-wide worker count used when callers pass ``None``."""
    global _workers
    _workers = workers


def default_workers() -> int:
    """Worker count: explicit setting, then ``MONODRIFT_WORKERS``, then 1."""
    if _workers is not None:
        return max(1, int(_workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def map_ordered(
    func: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None
) -> List[R]:
    """Apply ``func`` to every item, preserving input order.

    Args:
        func: Callable applied to each item
        items: Work items
        workers: Pool size (default: :func:`default_workers`)

    Returns:
        List of results in the order of ``items``
    """
    n = workers if workers is not None else default_workers()
    if n <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def chunk_ranges(total: int, chunk: int) -> List[range]:
    """Split ``range(total)`` into consecutive ranges of at most ``chunk`` items."""
    chunk = max(1, int(chunk))
    return [range(i, min(i + chunk, total)) for i in range(0, total, chunk)]
