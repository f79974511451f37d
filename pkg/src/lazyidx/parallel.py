"""
Thread-parallel map used to execute the map tasks of one wave.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING

try:
    from tqdm.auto import tqdm
except ImportError:
    tqdm = None

if TYPE_CHECKING:
    from typing import Callable, Sequence


def imap_threads(nthreads: int, func: Callable, items: Sequence, progress: bool = False, desc: str = "") -> list:
    """
    Runs func over items on a pool of nthreads threads and returns the
    results in input order. Threads (not processes) are used because map
    tasks share the per-node Adaptive Indexers and the replica registry.

    Args:
        nthreads: Number of worker threads.
        func: Callable taking one item.
        items: Items to process.
        progress: Show a tqdm progress bar (requires tqdm).
        desc: Progress bar label.

    Returns:
        List of results, same order as items.
    """
    if not items:
        return []
    if progress and tqdm is None:
        raise ImportError("tqdm must be installed for progress bars.")
    data = []
    with ThreadPoolExecutor(max_workers=max(1, nthreads)) as pool:
        results = pool.map(func, items)
        if progress:
            with tqdm(total=len(items), desc=desc, leave=False) as prog_bar:
                for d in results:
                    prog_bar.update()
                    data.append(d)
        else:
            data.extend(results)
    return data
