"""Deterministic worker pool used by the per-block parallel maps.

Every parallelised loop in this package is an order-preserving map over
independent items, so results are identical for any worker count. The pool
size is capped by the BAYERMC_THREADS environment variable.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = "BAYERMC_THREADS"


def worker_count() -> int:
    """Number of worker threads to use, honouring BAYERMC_THREADS."""
    avail = os.cpu_count() or 1
    raw = os.environ.get(_ENV_VAR)
    if raw is None:
        return avail
    try:
        requested = int(raw)
    except ValueError:
        raise ValueError(f"{_ENV_VAR} must be an integer, got {raw!r}")
    return max(1, min(requested, avail))


def parallel_map(fn, items):
    """Order-preserving map over ``items``, possibly using a thread pool.

    ``fn`` must be side-effect free with respect to shared state; each call
    only reads shared immutable inputs.
    """
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
