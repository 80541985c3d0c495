from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from config.settings import settings

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = None) -> List[R]:
    """Order-preserving map, threaded when PSEUDOTOR_THREADS allows it"""
    items = list(items)
    threads = threads or settings.threads
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
