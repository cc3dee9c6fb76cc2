"""Order-preserving parallel map used for replications and resamples."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "FULLSUB_THREADS"


def resolve_threads(threads: int | None) -> int:
    """Explicit count, else ``$FULLSUB_THREADS``, else 1.  0 means all cores."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, threads)


def map_slots(fn, count: int, threads: int) -> list:
    """``[fn(i) for i in range(count)]``, possibly concurrent; order preserved."""
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))
