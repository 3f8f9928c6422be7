"""Deterministic chunk-level parallelism.

Work is split into fixed chunks whose randomness comes from per-chunk (or
per-task) streams; partial results are merged in chunk order, so output
is bitwise identical for every worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

THREADS_ENV = "SHAPVAL_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: explicit request capped by the SHAPVAL_THREADS env var."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    cap = int(raw) if raw else 0
    n = requested if requested and requested > 0 else (cap if cap > 0 else 1)
    if cap > 0:
        n = min(n, cap)
    return max(1, n)


def chunk_ranges(total: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def ordered_chunk_map(
    fn: Callable[[int, int, int], T],
    ranges: Sequence[tuple[int, int]],
    threads: int,
) -> list[T]:
    """Apply fn(chunk_index, lo, hi) to every chunk; results in chunk order."""
    if threads <= 1 or len(ranges) <= 1:
        return [fn(i, lo, hi) for i, (lo, hi) in enumerate(ranges)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, i, lo, hi) for i, (lo, hi) in enumerate(ranges)]
        return [f.result() for f in futures]
