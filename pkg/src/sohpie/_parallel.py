"""Worker-count resolution and an order-preserving parallel map."""

from __future__ import annotations

import os

import numpy as np

ENV_THREADS = "SOHPIE_THREADS"


def resolve_threads(threads=None) -> int:
    """Explicit value, else ``$SOHPIE_THREADS``, else the CPU count. ``'auto'`` means CPU count."""
    if threads is None:
        threads = os.environ.get(ENV_THREADS, "auto")
    if isinstance(threads, str):
        if threads.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


def chunks(n: int, parts: int) -> list[np.ndarray]:
    parts = max(1, min(parts, n))
    return [c for c in np.array_split(np.arange(n), parts) if c.size]


def parallel_map(func, items, threads: int = 1) -> list:
    """``[func(x) for x in items]``, spread over `threads` worker processes.

    Results come back in input order, so any aggregation over them is
    independent of the worker count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=min(threads, len(items)))(delayed(func)(x) for x in items)
