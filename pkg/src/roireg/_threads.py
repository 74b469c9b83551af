import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    """Worker cap from SAMREG_THREADS (0 or unset: one per CPU)."""
    try:
        n = int(os.environ.get("SAMREG_THREADS", "0"))
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def parallel_map(fn, items):
    """Order-preserving map; runs inline when only one worker is allowed."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
