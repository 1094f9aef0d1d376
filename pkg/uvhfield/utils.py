# --------------------------------------------------------------------
# utils.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Monday March 3, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

# --------------------------------------------------------------------
T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "UVH_THREADS"


# --------------------------------------------------------------------
def worker_count() -> int:
    """
    Number of worker threads allowed for parallel sections, capped by
    the UVH_THREADS environment variable.
    """
    cpus = os.cpu_count() or 1
    try:
        cap = int(os.environ.get(THREADS_ENV, cpus))
    except ValueError:
        cap = cpus
    return max(1, min(cpus, cap))


# --------------------------------------------------------------------
def parallel_map(f: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """
    Map `f` over `items` on a thread pool, preserving input order.
    Runs inline when only one worker is allowed.
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [f(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(f, items))


# --------------------------------------------------------------------
def dump_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, two space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


# --------------------------------------------------------------------
def finite_or_sentinel(value: float) -> float | str:
    """JSON cannot carry infinities, so they are reported as the string "inf"."""
    if value == float("inf"):
        return "inf"
    return value
