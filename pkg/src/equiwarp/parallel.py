"""Order-preserving chunked map over a thread pool.

Callers key every chunk's randomness by its index, so results do not depend
on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor

__all__ = ["chunk_bounds", "map_chunks"]


def chunk_bounds(n, chunk):
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn, n, chunk, workers=1):
    """``[fn(index, lo, hi) for each chunk]`` in chunk order."""
    jobs = list(enumerate(chunk_bounds(n, chunk)))
    if workers <= 1 or len(jobs) <= 1:
        return [fn(i, lo, hi) for i, (lo, hi) in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda j: fn(j[0], *j[1]), jobs))
