"""Thread-pool map honoring ``IMUCAL_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_POOL = None
_POOL_SIZE = None


def thread_count():
    """Worker count: ``IMUCAL_THREADS`` if set, else ``min(4, cpu_count)``."""
    env = os.environ.get("IMUCAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def pmap(fn, items):
    """Ordered map; results are identical to the serial ``list(map(fn, items))``."""
    global _POOL, _POOL_SIZE
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    if _POOL is None or _POOL_SIZE != n:
        if _POOL is not None:
            _POOL.shutdown(wait=False)
        _POOL = ThreadPoolExecutor(max_workers=n)
        _POOL_SIZE = n
    return list(_POOL.map(fn, items))
