"""
Additional tools for iteration.
"""

from __future__ import annotations

import itertools
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Iterable, Iterator, Sequence, TypeVar

    T = TypeVar("T")


def chunks(items: Iterable[T], n: int) -> Iterator[tuple[T, ...]]:
    """
    Yield successive n-sized chunks from a list-like object.

    >>> import pprint
    >>> pprint.pprint(list(chunks(range(1, 25), 10)))
    [(1, 2, 3, 4, 5, 6, 7, 8, 9, 10),
     (11, 12, 13, 14, 15, 16, 17, 18, 19, 20),
     (21, 22, 23, 24)]
    """
    if n < 1:
        raise ValueError(f"chunk size must be positive, got {n}")
    it = iter(items)
    chunk = tuple(itertools.islice(it, n))
    while chunk:
        yield chunk
        chunk = tuple(itertools.islice(it, n))


def evenly_spaced(items: Sequence[T], k: int) -> list[T]:
    """
    Pick k items spread round-robin over a sequence: item i is taken when
    the running quota floor((i + 1) * k / n) increases. For k = n / 10 this
    takes every tenth item.

    >>> evenly_spaced(list(range(10)), 2)
    [4, 9]
    """
    n = len(items)
    k = max(0, min(k, n))
    picked = []
    for i, item in enumerate(items):
        if (i + 1) * k // n > i * k // n:
            picked.append(item)
    return picked
