"""Replica-level fan-out.  Results are always concatenated in replica order."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def default_workers() -> int:
    try:
        return max(len(os.sched_getaffinity(0)), 1)
    except AttributeError:
        return os.cpu_count() or 1


def _chunks(n: int, workers: int, chunk: int | None):
    if chunk is None:
        chunk = max(1, min(2000, -(-n // max(4 * workers, 1))))
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_replicas(fn, n: int, workers: int = 1, chunk: int | None = None, **kw) -> np.ndarray:
    """Evaluate ``fn(lo, hi, **kw)`` (which returns rows for replicas lo..hi-1) over [0, n)."""
    if n <= 0:
        return np.empty((0, 0))
    workers = max(int(workers or 1), 1)
    parts = _chunks(n, workers, chunk)
    if workers == 1 or len(parts) == 1:
        res = [fn(lo, hi, **kw) for lo, hi in parts]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(fn, lo, hi, **kw) for lo, hi in parts]
            res = [f.result() for f in futs]
    return np.concatenate(res, axis=0)
