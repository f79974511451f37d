"""
Pretty printing of run reports.
"""

from __future__ import annotations

import sys
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Any, Sequence, TextIO


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def pprint_table(table: list[list], out: TextIO = sys.stdout) -> None:
    """
    Prints out a table of data, padded for alignment
    Each row must have the same number of columns.

    Args:
        table: The table to print. A list of lists of strings.
        out: Output stream (file-like object)
    """
    if not table:
        return

    ncols = len(table[0])
    col_paddings = [max(len(row[i]) for row in table) for i in range(ncols)]

    for row in table:
        # left col
        out.write(row[0].ljust(col_paddings[0] + 1))
        # rest of the cols
        for i in range(1, len(row)):
            out.write(row[i].rjust(col_paddings[i] + 2))
        out.write("\n")


def pprint_rows(rows: Sequence[dict], columns: Sequence[str], out: TextIO = sys.stdout) -> None:
    """
    Prints report rows (dicts) as an aligned table with a header line.

    Args:
        rows: Report rows.
        columns: Keys to print, in order.
        out: Output stream.
    """
    table = [list(columns)]
    table.extend([_fmt(row.get(c)) for c in columns] for row in rows)
    pprint_table(table, out=out)
