"""Replication-block dispatch over a process pool."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Sequence

from src.errors import PreconditionViolated

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1000


def block_plan(reps: int, block_size: int = DEFAULT_BLOCK_SIZE) -> list[tuple[int, int]]:
    """(block index, replication count) pairs covering ``reps`` replications."""
    if reps < 1:
        raise PreconditionViolated(f"reps must be >= 1 (got {reps})")
    if block_size < 1:
        raise PreconditionViolated(f"block_size must be >= 1 (got {block_size})")
    full, rest = divmod(reps, block_size)
    plan = [(i, block_size) for i in range(full)]
    if rest:
        plan.append((full, rest))
    return plan


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return workers


def run_blocks(worker: Callable[[Any], Any], tasks: Sequence[Any], workers: int | None = 1) -> list[Any]:
    """Run ``worker`` on every task, returning results in task order.

    ``worker`` must be a module-level function so the pool can pickle it.
    """
    n_workers = min(resolve_workers(workers), len(tasks)) if tasks else 1
    if n_workers <= 1:
        return [worker(task) for task in tasks]

    logger.info(f"Distributing {len(tasks)} blocks across {n_workers} workers")
    results: list[Any] = [None] * len(tasks)
    with ProcessPoolExecutor(max_workers=n_workers) as executor:
        futures = {executor.submit(worker, task): i for i, task in enumerate(tasks)}
        done = 0
        for future in as_completed(futures):
            results[futures[future]] = future.result()
            done += 1
            logger.debug(f"Block {done}/{len(tasks)} done")
    return results
