"""
Bounded worker pool for embarrassingly parallel maps.

Threads are used rather than processes: the heavy lifting is numpy/scipy
code that releases the GIL, and the mapped callables close over read-only
graph and parameter state that would otherwise need pickling.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

from deglif.core.config import get_settings

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit value, else ``DEGLIF_THREADS``."""
    if workers is None:
        workers = get_settings().threads
    return max(1, int(workers))


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    workers: Optional[int] = None,
) -> List[R]:
    """
    Apply ``fn`` to every item, preserving input order in the result.

    Args:
        fn: Pure function of one item.
        items: Items to map over.
        workers: Pool size; defaults to the configured thread cap.

    Returns:
        List of results in the order of ``items``.
    """
    n_workers = min(resolve_workers(workers), max(1, len(items)))
    if n_workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: List[Optional[R]] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=n_workers) as executor:
        futures = {executor.submit(fn, item): idx for idx, item in enumerate(items)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results  # type: ignore[return-value]
