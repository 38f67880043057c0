"""
Background task runner for independent episodes.

Episodes are CPU-bound and synchronous; they run in worker threads through
asyncio.to_thread, bounded by a semaphore. Results come back in submission
order regardless of completion order, and failures are returned in place
instead of cancelling the sweep.
"""

import asyncio
import logging
from typing import Callable, List, Sequence, TypeVar, Union

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def run_bounded(func: Callable[[T], R], items: Sequence[T], max_parallel: int) -> List[Union[R, BaseException]]:
    """
    Apply `func` to every item with at most `max_parallel` calls in flight.

    Args:
        func (Callable): Synchronous worker
        items (Sequence): Work items
        max_parallel (int): Concurrency bound, >= 1

    Returns:
        List: One result or raised exception per item, in item order
    """
    if max_parallel < 1:
        raise ValueError(f"max_parallel must be >= 1, got {max_parallel}")
    semaphore = asyncio.Semaphore(max_parallel)

    async def one(item: T):
        async with semaphore:
            return await asyncio.to_thread(func, item)

    results = await asyncio.gather(*(one(item) for item in items), return_exceptions=True)
    failures = sum(isinstance(r, BaseException) for r in results)
    if failures:
        logger.warning(f"{failures} of {len(items)} tasks failed")
    return list(results)
