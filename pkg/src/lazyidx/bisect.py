"""
Bisection helpers for sparse page directories. The standard bisect
functions find insertion points; the lookups below turn them into the
"rightmost page whose first key is below x" style of question a sparse
clustered index asks.
"""

from __future__ import annotations

import bisect as bs
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Any, Sequence


def find_lt(a: Sequence[Any], x: Any) -> int:
    """Find rightmost value less than x."""
    if i := bs.bisect_left(a, x):
        return i - 1
    raise ValueError


def find_le(a: Sequence[Any], x: Any) -> int:
    """Find rightmost value less than or equal to x."""
    if i := bs.bisect_right(a, x):
        return i - 1
    raise ValueError


def page_span(first_keys: Sequence[Any], lo: Any, hi: Any) -> tuple[int, int] | None:
    """
    Pages of a sorted column that may hold keys in the closed range [lo, hi].

    A page whose first key equals lo may be preceded by a page ending in lo,
    so the span starts at the rightmost page whose first key is strictly
    below lo.

    Args:
        first_keys: First key of every page, non-decreasing.
        lo: Lower bound (inclusive).
        hi: Upper bound (inclusive).

    Returns:
        (first_page, last_page) inclusive, or None if no page can qualify.
    """
    if not first_keys or hi < lo:
        return None
    try:
        last = find_le(first_keys, hi)
    except ValueError:
        return None
    try:
        first = find_lt(first_keys, lo)
    except ValueError:
        first = 0
    if first > last:
        return None
    return first, last
