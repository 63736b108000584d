"""Deterministic replication-level parallelism.

Tasks are indexed; results are gathered into index order, so the output
is independent of the worker count and of scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")


def parallel_map(fn: Callable[[int], T], count: int, threads: int = 1) -> list[T]:
    if count == 0:
        return []
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))
