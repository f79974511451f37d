"""
Columnar (PAX) block format and the storage naming conventions of a node.

A block file has four parts: a block header (record count and the byte offset
and length of every attribute column), an index header, the index data (a
sparse page directory over the sort attribute) and the column data. An
optional permutation-vector section sits between the index data and the
columns; partial pseudo replicas use it for later completion.

All integers are little-endian::

    magic "ADXB" | version u16 | block_id u64 | record_count u64 | attr_count u16
    per attribute: name_len u16 | name | type tag u8 | width u16 | present u8 | offset u64 | length u64
    sort ordinal u16 (0xFFFF: unsorted)
    index present u8 [| ordinal u16 | page_size u32 | entry_count u64 | (key, start_record u64) * entry_count]
    permutation present u8 [| record_count u64 | u64 * record_count]
    column data

Columns are fixed width, so a reader can seek straight to any record of any
projected attribute without touching the others.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from lazyidx.bisect import page_span
from lazyidx.io import CountingReader
from lazyidx.json import MSONable

if TYPE_CHECKING:
    from typing import Any, Iterable, Mapping, Sequence, Union

    from lazyidx.io import ByteCounter

logger = logging.getLogger(__name__)

MAGIC = b"ADXB"
FORMAT_VERSION = 1
NO_ORDINAL = 0xFFFF
DEFAULT_PAGE_SIZE = 1024

_PREFIX = struct.Struct("<4sHQQH")
_NAME_LEN = struct.Struct("<H")
_ATTR = struct.Struct("<BHBQQ")
_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_INDEX_HEADER = struct.Struct("<HIQ")


class BlockFormatError(ValueError):
    """Raised when a block file is malformed."""


class SchemaError(KeyError):
    """Raised for unknown or unavailable attributes."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class AttributeType(Enum):
    """Column types. The value is the type tag stored in block files."""

    INT64 = 1
    FLOAT64 = 2
    STRING = 3


@dataclass(frozen=True)
class Attribute(MSONable):
    """
    One column of a schema. Strings are fixed width (in bytes), which keeps
    every record of a column addressable by offset.
    """

    name: str
    type: AttributeType
    width: int = 0

    def __post_init__(self):
        object.__setattr__(self, "type", AttributeType(self.type))
        if not self.name or "/" in self.name or "\\" in self.name or self.name.startswith("."):
            raise SchemaError(f"Invalid attribute name {self.name!r}")
        if self.type is AttributeType.STRING and not 0 < self.width < 0xFFFF:
            raise SchemaError(f"String attribute {self.name!r} needs a width in [1, 65534]")
        if self.type is not AttributeType.STRING:
            object.__setattr__(self, "width", 0)

    @property
    def dtype(self) -> np.dtype:
        if self.type is AttributeType.INT64:
            return np.dtype("<i8")
        if self.type is AttributeType.FLOAT64:
            return np.dtype("<f8")
        return np.dtype(f"S{self.width}")

    @property
    def itemsize(self) -> int:
        return self.dtype.itemsize

    @classmethod
    def parse(cls, spec: str) -> Attribute:
        """
        Parses "name:int64", "name:float64" or "name:str<width>".
        """
        name, _, type_str = spec.strip().partition(":")
        type_str = type_str.strip().lower()
        if type_str == "int64":
            return cls(name.strip(), AttributeType.INT64)
        if type_str == "float64":
            return cls(name.strip(), AttributeType.FLOAT64)
        if type_str.startswith("str") and type_str[3:].isdigit():
            return cls(name.strip(), AttributeType.STRING, int(type_str[3:]))
        raise SchemaError(f"Unknown attribute type in {spec!r}")

    def __str__(self) -> str:
        if self.type is AttributeType.STRING:
            return f"{self.name}:str{self.width}"
        return f"{self.name}:{self.type.name.lower()}"


@dataclass(frozen=True)
class Schema(MSONable):
    """Ordered, non-empty list of uniquely named attributes."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        attrs = tuple(a if isinstance(a, Attribute) else Attribute(**a) for a in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise SchemaError("A schema needs at least one attribute")
        names = [a.name for a in attrs]
        if len(set(names)) != len(names):
            raise SchemaError(f"Duplicate attribute names in {names}")

    @classmethod
    def parse(cls, specs: Union[str, Iterable[str]], sep: str = "|") -> Schema:
        """Builds a schema from "a:int64|b:str8" or a list of such specs."""
        if isinstance(specs, str):
            specs = specs.split(sep)
        return cls(tuple(Attribute.parse(s) for s in specs))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def record_width(self) -> int:
        return sum(a.itemsize for a in self.attributes)

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"Unknown attribute {name!r}")

    def __contains__(self, name: object) -> bool:
        return any(a.name == name for a in self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def ordinal(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise SchemaError(f"Unknown attribute {name!r}")

    def ordered(self, names: Iterable[str]) -> list[str]:
        """Returns names in schema order, checking that all of them exist."""
        wanted = set(names)
        unknown = wanted.difference(self.names)
        if unknown:
            raise SchemaError(f"Unknown attributes {sorted(unknown)}")
        return [n for n in self.names if n in wanted]

    def coerce(self, name: str, value: Any, side: str | None = None) -> Any:
        """
        Converts a predicate constant to the column's value type.

        Args:
            name: Attribute name.
            value: The constant.
            side: "low" or "high" for a range bound. A fractional bound on
                an integer column is rounded inwards (up for "low", down
                for "high"); without a side it is an error. A string bound
                longer than the attribute width is cut to the width, except
                as a low bound, where cutting would admit smaller values.
        """
        attr = self[name]
        if attr.type is AttributeType.INT64:
            if isinstance(value, (float, np.floating)):
                info = np.iinfo(np.int64)
                if math.isinf(value):
                    return int(info.min if value < 0 else info.max)
                if side == "low":
                    value = math.ceil(value)
                elif side == "high":
                    value = math.floor(value)
                elif not float(value).is_integer():
                    raise ValueError(f"{value!r} is not a valid {name!r} value")
                return min(max(int(value), int(info.min)), int(info.max))
            return int(value)
        if attr.type is AttributeType.FLOAT64:
            return float(value)
        if isinstance(value, str):
            value = value.encode("utf-8")
        value = bytes(value)
        if len(value) > attr.width and side == "low":
            raise ValueError(f"Low bound {value!r} is wider than {name!r} ({attr.width} bytes)")
        return value[: attr.width]

    def records_per_block(self, block_bytes: int) -> int:
        """Record budget equivalent to a byte budget per block."""
        return max(1, block_bytes // self.record_width)

    def __str__(self) -> str:
        return "|".join(str(a) for a in self.attributes)


@dataclass
class SparseClusteredIndex:
    """
    Page directory over a sorted column: the first key and first record of
    every page of page_size_records records. Entry k covers records
    [start_records[k], start_records[k + 1]); the last entry runs to
    record_count.
    """

    attribute: str
    page_size_records: int
    first_keys: np.ndarray
    start_records: np.ndarray
    record_count: int

    @classmethod
    def build(cls, column: np.ndarray, attribute: str, page_size_records: int = DEFAULT_PAGE_SIZE):
        """
        Args:
            column: Sorted (non-decreasing) column.
            attribute: Name of the column.
            page_size_records: Records per page.
        """
        if page_size_records < 1:
            raise ValueError(f"page_size_records must be positive, got {page_size_records}")
        starts = np.arange(0, len(column), page_size_records, dtype=np.uint64)
        return cls(
            attribute=attribute,
            page_size_records=page_size_records,
            first_keys=np.asarray(column)[starts.astype(np.int64)],
            start_records=starts,
            record_count=len(column),
        )

    @property
    def entries(self) -> list[tuple[Any, int]]:
        return list(zip(self.first_keys.tolist(), (int(s) for s in self.start_records)))

    def __len__(self) -> int:
        return len(self.start_records)

    def validate(self, column: np.ndarray | None = None) -> None:
        """Checks the directory invariants, and the keys against column if given."""
        starts = self.start_records.astype(np.int64)
        if len(starts):
            if starts[0] != 0:
                raise BlockFormatError("First index entry must start at record 0")
            if np.any(np.diff(starts) <= 0):
                raise BlockFormatError("Index start records must be strictly increasing")
            if starts[-1] >= self.record_count:
                raise BlockFormatError("Index entry starts past the end of the block")
            if len(self.first_keys) > 1 and np.any(self.first_keys[1:] < self.first_keys[:-1]):
                raise BlockFormatError("Index keys must be non-decreasing")
        elif self.record_count:
            raise BlockFormatError("Non-empty block with an empty index")
        if column is not None and not np.array_equal(np.asarray(column)[starts], self.first_keys):
            raise BlockFormatError(f"Index keys do not match column {self.attribute!r}")

    def lookup(self, lo: Any, hi: Any) -> tuple[int, int] | None:
        """
        Candidate record range [start, end) for keys in [lo, hi], at page
        granularity. None if no page can hold a qualifying key.
        """
        span = page_span(self.first_keys.tolist(), lo, hi)
        if span is None:
            return None
        first, last = span
        start = int(self.start_records[first])
        end = int(self.start_records[last + 1]) if last + 1 < len(self) else self.record_count
        return start, end


@dataclass(eq=False)
class DataBlock:
    """
    In-memory columnar block. columns may hold a subset of the schema (a
    projected read, or a partial pseudo replica); every present column has
    record_count entries.
    """

    block_id: int
    schema: Schema
    columns: dict[str, np.ndarray]
    record_count: int = -1
    sort_attribute: str | None = None
    index: SparseClusteredIndex | None = None
    permutation: np.ndarray | None = None

    def __post_init__(self):
        self.columns = {name: np.asarray(self.columns[name]) for name in self.schema.ordered(self.columns)}
        if self.record_count < 0:
            self.record_count = len(next(iter(self.columns.values()))) if self.columns else 0

    @classmethod
    def from_columns(cls, block_id: int, schema: Schema, columns: Mapping[str, Sequence], **kwargs) -> DataBlock:
        """Builds a block, converting every column to the schema dtype."""
        cols = {name: np.asarray(values, dtype=schema[name].dtype) for name, values in columns.items()}
        return cls(block_id, schema, cols, **kwargs)

    @property
    def attributes(self) -> list[str]:
        return list(self.columns)

    @property
    def is_complete(self) -> bool:
        return len(self.columns) == len(self.schema)

    @property
    def nbytes(self) -> int:
        return sum(self.schema[name].itemsize for name in self.columns) * self.record_count

    def validate(self) -> None:
        """Checks the block invariants."""
        for name, col in self.columns.items():
            if len(col) != self.record_count:
                raise ValueError(f"Column {name!r} has {len(col)} entries, expected {self.record_count}")
        if self.sort_attribute is not None:
            if self.sort_attribute not in self.columns:
                raise SchemaError(f"Sort attribute {self.sort_attribute!r} is not present")
            col = self.columns[self.sort_attribute]
            if len(col) > 1 and np.any(col[1:] < col[:-1]):
                raise ValueError(f"Column {self.sort_attribute!r} is not sorted")
        if self.index is not None:
            if self.index.attribute != self.sort_attribute:
                raise ValueError("Index attribute must be the sort attribute")
            if self.index.record_count != self.record_count:
                raise ValueError("Index record count does not match block")
            self.index.validate(self.columns[self.sort_attribute])
        if self.permutation is not None:
            perm = np.asarray(self.permutation)
            if len(perm) != self.record_count or not np.array_equal(
                np.sort(perm), np.arange(self.record_count, dtype=perm.dtype)
            ):
                raise ValueError("Permutation vector is not a bijection on the block's records")

    def project(self, names: Iterable[str]) -> DataBlock:
        """Returns a block holding only the given columns."""
        names = self.schema.ordered(names)
        missing = set(names).difference(self.columns)
        if missing:
            raise SchemaError(f"Attributes {sorted(missing)} not present in block {self.block_id}")
        keep_index = self.sort_attribute in names
        return DataBlock(
            self.block_id,
            self.schema,
            {n: self.columns[n] for n in names},
            record_count=self.record_count,
            sort_attribute=self.sort_attribute if keep_index else None,
            index=self.index if keep_index else None,
        )

    def checksum(self) -> str:
        """sha1 over every present column, in schema order."""
        h = hashlib.sha1()
        h.update(_U64.pack(self.record_count))
        for name, col in self.columns.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(col).tobytes())
        return h.hexdigest()

    def records(self, names: Sequence[str] | None = None) -> list[tuple]:
        """Rows as tuples, for the given columns (default: all present)."""
        names = list(self.columns) if names is None else list(names)
        if not names:
            return [()] * self.record_count
        return list(zip(*(self.columns[n].tolist() for n in names)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataBlock):
            return NotImplemented
        return (
            self.block_id == other.block_id
            and self.schema == other.schema
            and self.record_count == other.record_count
            and list(self.columns) == list(other.columns)
            and all(np.array_equal(self.columns[n], other.columns[n]) for n in self.columns)
            and self.sort_attribute == other.sort_attribute
        )


@dataclass
class AttributeEntry:
    """Header entry of one attribute in a block file."""

    attribute: Attribute
    present: bool
    offset: int
    length: int


@dataclass
class BlockHeader:
    """Parsed header of a block file."""

    block_id: int
    record_count: int
    schema: Schema
    entries: dict[str, AttributeEntry]
    sort_attribute: str | None
    index_attribute: str | None
    header_bytes: int
    index_offset: int = 0
    index_entry_count: int = 0
    page_size_records: int = 0
    permutation_offset: int = 0
    has_permutation: bool = False

    @property
    def available_attributes(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.present]


def _header_size(block: DataBlock) -> int:
    size = _PREFIX.size
    for a in block.schema.attributes:
        size += _NAME_LEN.size + len(a.name.encode("utf-8")) + _ATTR.size
    size += _U16.size + _U8.size
    if block.index is not None:
        keysize = block.schema[block.index.attribute].itemsize
        size += _INDEX_HEADER.size + len(block.index) * (keysize + _U64.size)
    size += _U8.size
    if block.permutation is not None:
        size += _U64.size + _U64.size * block.record_count
    return size


def encode_block(block: DataBlock) -> bytes:
    """Serializes a block into the file layout described in the module docstring."""
    block.validate()
    schema = block.schema
    offset = _header_size(block)
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, block.block_id, block.record_count, len(schema))]
    data = []
    for a in schema.attributes:
        name = a.name.encode("utf-8")
        present = a.name in block.columns
        col_bytes = np.ascontiguousarray(block.columns[a.name], dtype=a.dtype).tobytes() if present else b""
        parts.append(_NAME_LEN.pack(len(name)) + name)
        parts.append(_ATTR.pack(a.type.value, a.width, int(present), offset if present else 0, len(col_bytes)))
        data.append(col_bytes)
        offset += len(col_bytes)

    parts.append(_U16.pack(schema.ordinal(block.sort_attribute) if block.sort_attribute else NO_ORDINAL))
    if block.index is None:
        parts.append(_U8.pack(0))
    else:
        index = block.index
        key_dtype = schema[index.attribute].dtype
        parts.append(_U8.pack(1))
        parts.append(_INDEX_HEADER.pack(schema.ordinal(index.attribute), index.page_size_records, len(index)))
        keys = np.ascontiguousarray(index.first_keys, dtype=key_dtype)
        for i, start in enumerate(index.start_records):
            parts.append(keys[i : i + 1].tobytes() + _U64.pack(int(start)))
    if block.permutation is None:
        parts.append(_U8.pack(0))
    else:
        parts.append(_U8.pack(1) + _U64.pack(block.record_count))
        parts.append(np.ascontiguousarray(block.permutation, dtype="<u8").tobytes())

    header = b"".join(parts)
    if len(header) != _header_size(block):
        raise BlockFormatError("Header size mismatch while encoding")
    return header + b"".join(data)


def write_block(block: DataBlock, path: Union[str, Path]) -> int:
    """
    Writes a block file. The block is validated before anything touches
    the disk.

    Args:
        block: Block to write.
        path: Target file.

    Returns:
        Number of bytes written.
    """
    payload = encode_block(block)
    with open(path, "wb") as f:
        f.write(payload)
    logger.debug(f"Wrote block {block.block_id} ({len(payload)} bytes) to {path}")
    return len(payload)


class BlockFile:
    """
    Random-access reader of one block file. Only the header is parsed on
    open; the index, the permutation vector and every column are read on
    demand, and all reads go through a byte counter.

    Usage::

        with BlockFile(path, counter) as bf:
            rows = bf.index.lookup(lo, hi)
            cols = bf.read_columns(["b", "d"], rows)
    """

    def __init__(self, path: Union[str, Path], counter: ByteCounter | None = None):
        self.path = Path(path)
        self._reader = CountingReader(open(self.path, "rb"), counter)
        try:
            self.header = self._read_header()
        except (EOFError, struct.error, UnicodeDecodeError, ValueError, SchemaError) as exc:
            self._reader.close()
            if isinstance(exc, (BlockFormatError, SchemaError)):
                raise
            raise BlockFormatError(f"Malformed block file {self.path}: {exc}") from exc
        self._index: SparseClusteredIndex | None = None

    @property
    def bytes_read(self) -> int:
        return self._reader.bytes_read

    def _read_header(self) -> BlockHeader:
        r = self._reader
        magic, version, block_id, record_count, attr_count = _PREFIX.unpack(r.read_exactly(_PREFIX.size))
        if magic != MAGIC:
            raise BlockFormatError(f"Bad magic {magic!r} in {self.path}")
        if version != FORMAT_VERSION:
            raise BlockFormatError(f"Unsupported format version {version} in {self.path}")
        attributes = []
        entries = {}
        for _ in range(attr_count):
            (name_len,) = _NAME_LEN.unpack(r.read_exactly(_NAME_LEN.size))
            name = r.read_exactly(name_len).decode("utf-8")
            tag, width, present, offset, length = _ATTR.unpack(r.read_exactly(_ATTR.size))
            attr = Attribute(name, AttributeType(tag), width)
            attributes.append(attr)
            entries[name] = AttributeEntry(attr, bool(present), offset, length)
            if present and length != attr.itemsize * record_count:
                raise BlockFormatError(f"Column {name!r} length {length} does not match record count")
        schema = Schema(tuple(attributes))
        (sort_ordinal,) = _U16.unpack(r.read_exactly(_U16.size))
        sort_attribute = None if sort_ordinal == NO_ORDINAL else schema.attributes[sort_ordinal].name
        header = BlockHeader(block_id, record_count, schema, entries, sort_attribute, None, 0)

        (index_present,) = _U8.unpack(r.read_exactly(_U8.size))
        if index_present:
            ordinal, page_size, entry_count = _INDEX_HEADER.unpack(r.read_exactly(_INDEX_HEADER.size))
            header.index_attribute = schema.attributes[ordinal].name
            header.page_size_records = page_size
            header.index_entry_count = entry_count
            header.index_offset = r.tell()
            keysize = schema.attributes[ordinal].itemsize
            r.seek(header.index_offset + entry_count * (keysize + _U64.size))
        (perm_present,) = _U8.unpack(r.read_exactly(_U8.size))
        header.has_permutation = bool(perm_present)
        if perm_present:
            header.permutation_offset = r.tell()
            r.seek(header.permutation_offset + _U64.size + _U64.size * record_count)
        header.header_bytes = r.tell()
        return header

    @property
    def schema(self) -> Schema:
        return self.header.schema

    @property
    def record_count(self) -> int:
        return self.header.record_count

    @property
    def index(self) -> SparseClusteredIndex | None:
        """The sparse index, read from the file on first access."""
        h = self.header
        if h.index_attribute is None:
            return None
        if self._index is None:
            key_dtype = h.schema[h.index_attribute].dtype
            entry_dtype = np.dtype([("key", key_dtype), ("start", "<u8")])
            self._reader.seek(h.index_offset)
            raw = self._reader.read_exactly(h.index_entry_count * entry_dtype.itemsize)
            entries = np.frombuffer(raw, dtype=entry_dtype)
            self._index = SparseClusteredIndex(
                attribute=h.index_attribute,
                page_size_records=h.page_size_records,
                first_keys=entries["key"].copy(),
                start_records=entries["start"].copy(),
                record_count=h.record_count,
            )
        return self._index

    def read_permutation(self) -> np.ndarray | None:
        """The persisted permutation vector of a partial pseudo replica."""
        h = self.header
        if not h.has_permutation:
            return None
        self._reader.seek(h.permutation_offset)
        (count,) = _U64.unpack(self._reader.read_exactly(_U64.size))
        if count != h.record_count:
            raise BlockFormatError(f"Permutation length {count} does not match record count")
        return np.frombuffer(self._reader.read_exactly(_U64.size * count), dtype="<u8").astype(np.int64)

    def read_columns(
        self, names: Iterable[str], row_range: tuple[int, int] | None = None
    ) -> dict[str, np.ndarray]:
        """
        Reads the given columns, restricted to records [start, end) if
        row_range is given. Unrequested columns are never read.
        """
        h = self.header
        start, end = (0, h.record_count) if row_range is None else row_range
        if not 0 <= start <= end <= h.record_count:
            raise ValueError(f"Row range {row_range} outside [0, {h.record_count})")
        out = {}
        for name in h.schema.ordered(names):
            entry = h.entries[name]
            if not entry.present:
                raise SchemaError(f"Attribute {name!r} is not stored in {self.path}")
            itemsize = entry.attribute.itemsize
            self._reader.seek(entry.offset + start * itemsize)
            raw = self._reader.read_exactly((end - start) * itemsize)
            out[name] = np.frombuffer(raw, dtype=entry.attribute.dtype)
        return out

    def close(self) -> None:
        self._reader.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def read_block(
    path: Union[str, Path],
    projection: Iterable[str] | None = None,
    row_range: tuple[int, int] | None = None,
    counter: ByteCounter | None = None,
    with_permutation: bool = False,
) -> DataBlock:
    """
    Reads a (projected) block from a block file.

    Args:
        path: Block file.
        projection: Attributes to load. Defaults to every attribute stored in
            the file.
        row_range: Optional [start, end) record range.
        counter: Byte counter charged with every byte read.
        with_permutation: Also load the permutation vector, if any.

    Returns:
        DataBlock with exactly the projected columns. The sort attribute and
        index are attached when the whole block is read and the sort column
        is part of the projection.
    """
    with BlockFile(path, counter) as bf:
        h = bf.header
        names = h.available_attributes if projection is None else h.schema.ordered(projection)
        columns = bf.read_columns(names, row_range)
        whole = row_range is None or tuple(row_range) == (0, h.record_count)
        keep_sort = whole and h.sort_attribute in columns
        block = DataBlock(
            h.block_id,
            h.schema,
            columns,
            record_count=h.record_count if row_range is None else row_range[1] - row_range[0],
            sort_attribute=h.sort_attribute if keep_sort else None,
            index=bf.index if keep_sort and h.index_attribute == h.sort_attribute else None,
            permutation=bf.read_permutation() if with_permutation and whole else None,
        )
    return block


def read_header(path: Union[str, Path], counter: ByteCounter | None = None) -> BlockHeader:
    """Parses only the header of a block file."""
    with BlockFile(path, counter) as bf:
        return bf.header


def normal_replica_path(block_id: int, node_root: Union[str, Path]) -> Path:
    """Path of a normal replica of block_id on the node rooted at node_root."""
    return Path(node_root) / "blocks" / f"blk_{block_id}"


def pseudo_replica_path(block_id: int, attribute: str, node_root: Union[str, Path] = ".") -> Path:
    """
    Path of the pseudo replica of block_id indexed on attribute, following
    the <node_root>/pseudo/blk_<id>/<attribute> convention.
    """
    if not attribute or "/" in attribute or attribute.startswith("."):
        raise SchemaError(f"Invalid attribute name {attribute!r}")
    return Path(node_root) / "pseudo" / f"blk_{block_id}" / attribute


def pseudo_temp_path(block_id: int, attribute: str, nonce: str, node_root: Union[str, Path] = ".") -> Path:
    """Temporary file an Index Writer fills before publishing a pseudo replica."""
    final = pseudo_replica_path(block_id, attribute, node_root)
    return final.parent / f".{attribute}.tmp.{nonce}"
