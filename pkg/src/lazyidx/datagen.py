"""
Dataset generators and the textual dataset format.

A dataset file is "|"-delimited text whose first line is the typed schema,
e.g. ``a:int64|b:float64|c:str32``, followed by one record per line. Files
ending in .gz, .bz2 or .xz are compressed transparently.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np

from lazyidx.block_store import AttributeType, Schema
from lazyidx.io import zopen

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Mapping, Union

logger = logging.getLogger(__name__)

SYNTHETIC_SCHEMA = Schema.parse("a:int64|b:int64|c:int64|d:int64|e:int64|f:int64")

USERVISITS_SCHEMA = Schema.parse(
    "sourceIP:str16|destURL:str100|visitDate:int64|adRevenue:float64|userAgent:str64"
    "|countryCode:str3|languageCode:str6|searchWord:str32|duration:int64"
)

#: Distinct searchWord values; a range of two words selects 0.4% of the records.
SEARCH_WORDS = 500

_USER_AGENTS = (
    "Mozilla/5.0 (X11; Linux x86_64)",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64)",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 13_0)",
    "Opera/9.80 (X11; Linux i686)",
    "Lynx/2.8.9rel.1",
)
_COUNTRIES = ("USA", "DEU", "FRA", "BRA", "IND", "CHN", "JPN", "GBR", "CAN", "AUS")
_LANGUAGES = ("en-US", "de-DE", "fr-FR", "pt-BR", "hi-IN", "zh-CN", "ja-JP", "en-GB")


def exponential_counts(rows: int, n_values: int = 10) -> list[int]:
    """
    Occurrences of the values 1..n_values when value i gets a share
    10^(i-1) / sum of all shares. Counts are floored; the remainder goes to
    the values with the largest fractional parts, larger values first on
    ties.

    >>> exponential_counts(10)
    [0, 0, 0, 0, 0, 0, 0, 0, 1, 9]
    """
    weights = [10**i for i in range(n_values)]
    total = sum(weights)
    counts = [rows * w // total for w in weights]
    fractions = [rows * w % total for w in weights]
    by_fraction = sorted(range(n_values), key=lambda i: (fractions[i], i), reverse=True)
    for i in by_fraction[: rows - sum(counts)]:
        counts[i] += 1
    return counts


def gen_synthetic(rows: int, seed: int = 0) -> tuple[Schema, dict[str, np.ndarray]]:
    """
    Six integer attributes a..f. Attribute a takes the values 1..10 with
    exponentially growing frequencies (see exponential_counts); b..f are
    uniform in [0, 10^6). Records are shuffled.

    Args:
        rows: Number of records, positive.
        seed: Random seed.

    Returns:
        (schema, columns)
    """
    if rows <= 0:
        raise ValueError(f"rows must be positive, got {rows}")
    rng = np.random.default_rng(seed)
    a = np.repeat(np.arange(1, 11, dtype=np.int64), exponential_counts(rows))
    columns = {"a": a}
    for name in SYNTHETIC_SCHEMA.names[1:]:
        columns[name] = rng.integers(0, 1_000_000, size=rows, dtype=np.int64)
    order = rng.permutation(rows)
    return SYNTHETIC_SCHEMA, {name: col[order] for name, col in columns.items()}


def _strings(values, width: int) -> np.ndarray:
    return np.array([v.encode("ascii") for v in values], dtype=f"S{width}")


def gen_uservisits_like(rows: int, seed: int = 0) -> tuple[Schema, dict[str, np.ndarray]]:
    """
    Web-log records with nine mostly string attributes, destURL being the
    largest. searchWord cycles through SEARCH_WORDS values ("word0000",
    "word0001", ...) before shuffling, so when rows is a multiple of
    SEARCH_WORDS a single word selects exactly 0.2% of the records.
    """
    if rows <= 0:
        raise ValueError(f"rows must be positive, got {rows}")
    rng = np.random.default_rng(seed)
    octets = rng.integers(1, 255, size=(rows, 4))
    hosts = rng.integers(0, 100_000, size=rows)
    pages = rng.integers(0, 1_000_000, size=rows)
    days = rng.integers(0, 365 * 20, size=rows)
    dates = np.datetime64("2000-01-01") + days.astype("timedelta64[D]")
    year = dates.astype("datetime64[Y]")
    month = dates.astype("datetime64[M]")
    yyyymmdd = (
        (year.astype(np.int64) + 1970) * 10000
        + ((month - year).astype(np.int64) + 1) * 100
        + (dates - month).astype(np.int64)
        + 1
    )

    columns = {
        "sourceIP": _strings((".".join(map(str, o)) for o in octets.tolist()), 16),
        "destURL": _strings((f"http://www.site{h:05d}.com/page/{p:06d}.html" for h, p in zip(hosts, pages)), 100),
        "visitDate": yyyymmdd,
        "adRevenue": np.round(rng.uniform(0.0, 1000.0, size=rows), 2),
        "userAgent": _strings((_USER_AGENTS[i] for i in rng.integers(0, len(_USER_AGENTS), size=rows)), 64),
        "countryCode": _strings((_COUNTRIES[i] for i in rng.integers(0, len(_COUNTRIES), size=rows)), 3),
        "languageCode": _strings((_LANGUAGES[i] for i in rng.integers(0, len(_LANGUAGES), size=rows)), 6),
        "searchWord": _strings((f"word{i % SEARCH_WORDS:04d}" for i in range(rows)), 32),
        "duration": rng.integers(1, 10_000, size=rows, dtype=np.int64),
    }
    order = rng.permutation(rows)
    return USERVISITS_SCHEMA, {name: col[order] for name, col in columns.items()}


def _format(value, attr_type: AttributeType) -> str:
    if attr_type is AttributeType.STRING:
        return value.decode("ascii")
    return repr(value)


def write_dataset(path: Union[str, Path], schema: Schema, columns: Mapping[str, np.ndarray]) -> int:
    """
    Writes a dataset file.

    Returns:
        Number of records written.
    """
    types = [a.type for a in schema.attributes]
    cols = [columns[name].tolist() for name in schema.names]
    n = len(cols[0]) if cols else 0
    with zopen(path, "wt", encoding="ascii", newline="\n") as f:
        f.write(f"{schema}\n")
        for row in zip(*cols):
            f.write("|".join(_format(v, t) for v, t in zip(row, types)) + "\n")
    logger.info(f"Wrote {n} records to {path}")
    return n


def load_dataset(path: Union[str, Path]) -> tuple[Schema, dict[str, np.ndarray]]:
    """
    Reads a dataset file.

    Returns:
        (schema, columns)
    """
    with zopen(path, "rt", encoding="ascii") as f:
        header = f.readline().strip()
        if not header:
            raise ValueError(f"{path} has no schema line")
        schema = Schema.parse(header)
        values: list[list[str]] = [[] for _ in schema.attributes]
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("|")
            if len(fields) != len(schema):
                raise ValueError(f"{path}:{lineno}: expected {len(schema)} fields, got {len(fields)}")
            for col, value in zip(values, fields):
                col.append(value)
    columns = {}
    for attr, col in zip(schema.attributes, values):
        if attr.type is AttributeType.STRING:
            columns[attr.name] = np.array([v.encode("ascii") for v in col], dtype=attr.dtype)
        else:
            columns[attr.name] = np.asarray(col, dtype=str).astype(attr.dtype)
    return schema, columns
