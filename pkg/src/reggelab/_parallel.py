"""Chunked thread parallelism with deterministic reduction."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def thread_count() -> int:
    """Worker count from REGGE_THREADS (default 1)."""
    raw = os.environ.get("REGGE_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    return max(1, k)


def map_chunks(fn, arrays, chunk: int = 4096):
    """Apply fn to row chunks of the given arrays and concatenate in order.

    Every row is handled independently by fn, so the result does not depend
    on the chunking or the number of threads.
    """
    arrays = [np.asarray(a) for a in arrays]
    N = len(arrays[0])
    if N == 0:
        return fn(*arrays)
    bounds = list(range(0, N, chunk)) + [N]
    pieces = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    k = min(thread_count(), len(pieces))
    if k <= 1:
        out = [fn(*p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=k) as pool:
            out = list(pool.map(lambda p: fn(*p), pieces))
    return np.concatenate(out, axis=0)
