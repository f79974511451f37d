from __future__ import annotations

import struct
from typing import TYPE_CHECKING

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lazyidx.block_store import (
    MAGIC,
    Attribute,
    AttributeType,
    BlockFile,
    BlockFormatError,
    DataBlock,
    Schema,
    SchemaError,
    SparseClusteredIndex,
    normal_replica_path,
    pseudo_replica_path,
    pseudo_temp_path,
    read_block,
    read_header,
    write_block,
)
from lazyidx.indexer import build_index
from lazyidx.io import ByteCounter

from .conftest import SCHEMA, make_columns

if TYPE_CHECKING:
    from pathlib import Path


@pytest.fixture
def block() -> DataBlock:
    return DataBlock(7, SCHEMA, make_columns(500, seed=3))


class TestSchema:
    def test_parse(self):
        schema = Schema.parse("a:int64|b:float64|name:str12")
        assert schema.names == ["a", "b", "name"]
        assert schema["name"] == Attribute("name", AttributeType.STRING, 12)
        assert schema.record_width == 8 + 8 + 12
        assert str(schema) == "a:int64|b:float64|name:str12"

    def test_bad_schemas(self):
        with pytest.raises(SchemaError, match="Unknown attribute type"):
            Schema.parse("a:int32")
        with pytest.raises(SchemaError, match="Duplicate"):
            Schema.parse("a:int64|a:float64")
        with pytest.raises(SchemaError, match="width"):
            Attribute("s", AttributeType.STRING, 0)
        with pytest.raises(SchemaError, match="Invalid attribute name"):
            Attribute("../x", AttributeType.INT64)

    def test_ordered_and_coerce(self):
        assert SCHEMA.ordered(["f", "a", "c"]) == ["a", "c", "f"]
        with pytest.raises(SchemaError, match="Unknown attributes"):
            SCHEMA.ordered(["a", "zz"])
        assert SCHEMA.coerce("a", "3") == 3
        assert SCHEMA.coerce("c", 1) == 1.0
        assert SCHEMA.coerce("e", "s12345678") == b"s1234567"
        assert SCHEMA.coerce("e", "s12345678", "high") == b"s1234567"

    def test_coerce_range_bounds(self):
        assert SCHEMA.coerce("a", 2.5, "low") == 3
        assert SCHEMA.coerce("a", 2.5, "high") == 2
        assert SCHEMA.coerce("a", -2.5, "low") == -2
        assert SCHEMA.coerce("a", -2.5, "high") == -3
        assert SCHEMA.coerce("a", 4.0) == 4
        assert SCHEMA.coerce("a", float("-inf"), "low") == np.iinfo(np.int64).min
        assert SCHEMA.coerce("a", 1e30, "high") == np.iinfo(np.int64).max
        with pytest.raises(ValueError, match="not a valid"):
            SCHEMA.coerce("a", 2.5)
        with pytest.raises(ValueError, match="wider than 'e'"):
            SCHEMA.coerce("e", "s12345678", "low")
        assert SCHEMA.coerce("e", "s1234567", "low") == b"s1234567"

    def test_records_per_block(self):
        assert SCHEMA.records_per_block(SCHEMA.record_width * 10 + 3) == 10
        assert SCHEMA.records_per_block(1) == 1

    def test_as_dict_round_trip(self):
        assert Schema.from_dict(SCHEMA.as_dict()) == SCHEMA


class TestBlockFile:
    def test_round_trip(self, tmp_path: Path, block: DataBlock):
        path = tmp_path / "blk_7"
        n = write_block(block, path)
        assert n == path.stat().st_size
        assert read_block(path) == block
        header = read_header(path)
        assert header.block_id == 7
        assert header.record_count == 500
        assert header.sort_attribute is None
        assert header.index_attribute is None
        assert header.available_attributes == SCHEMA.names

    def test_indexed_round_trip(self, tmp_path: Path, block: DataBlock):
        sorted_block, _, index = build_index(block, "d", page_size_records=64)
        path = tmp_path / "blk_7"
        write_block(sorted_block, path)
        back = read_block(path)
        assert back == sorted_block
        assert back.index.attribute == "d"
        assert back.index.entries == index.entries
        assert read_header(path).page_size_records == 64

    def test_projection_reads_only_requested_columns(self, tmp_path: Path, block: DataBlock):
        path = tmp_path / "blk"
        write_block(block, path)
        full, one = ByteCounter(), ByteCounter()
        read_block(path, counter=full)
        projected = read_block(path, ["b"], counter=one)
        assert projected.attributes == ["b"]
        np.testing.assert_array_equal(projected.columns["b"], block.columns["b"])
        assert full.total == path.stat().st_size
        assert one.total == read_header(path).header_bytes + 8 * 500

    def test_row_range(self, tmp_path: Path, block: DataBlock):
        path = tmp_path / "blk"
        write_block(block, path)
        with BlockFile(path) as bf:
            cols = bf.read_columns(["e", "a"], (100, 110))
            assert list(cols) == ["a", "e"]
            np.testing.assert_array_equal(cols["e"], block.columns["e"][100:110])
            with pytest.raises(ValueError, match="outside"):
                bf.read_columns(["a"], (490, 501))
        part = read_block(path, ["a"], row_range=(0, 10))
        assert part.record_count == 10

    def test_partial_block_with_permutation(self, tmp_path: Path, block: DataBlock):
        sorted_block, perm, _ = build_index(block.project(["b", "d"]), "d", 32)
        sorted_block.permutation = perm.perm
        path = tmp_path / "partial"
        write_block(sorted_block, path)
        header = read_header(path)
        assert header.available_attributes == ["b", "d"]
        assert header.has_permutation
        with BlockFile(path) as bf:
            np.testing.assert_array_equal(bf.read_permutation(), perm.perm)
            with pytest.raises(SchemaError, match="not stored"):
                bf.read_columns(["a"])
        back = read_block(path, with_permutation=True)
        np.testing.assert_array_equal(back.permutation, perm.perm)
        assert not back.is_complete

    def test_empty_block(self, tmp_path: Path):
        empty = DataBlock.from_columns(0, SCHEMA, {name: [] for name in SCHEMA.names})
        path = tmp_path / "empty"
        write_block(empty, path)
        back = read_block(path)
        assert back.record_count == 0
        assert back == empty

    def test_malformed_files(self, tmp_path: Path, block: DataBlock):
        path = tmp_path / "blk"
        write_block(block, path)
        raw = path.read_bytes()

        bad_magic = tmp_path / "bad_magic"
        bad_magic.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(BlockFormatError, match="magic"):
            read_header(bad_magic)

        truncated = tmp_path / "truncated"
        truncated.write_bytes(raw[:30])
        with pytest.raises(BlockFormatError):
            read_header(truncated)

        bad_version = tmp_path / "bad_version"
        bad_version.write_bytes(MAGIC + struct.pack("<H", 99) + raw[6:])
        with pytest.raises(BlockFormatError, match="version"):
            read_header(bad_version)

    def test_invalid_blocks_are_not_written(self, tmp_path: Path, block: DataBlock):
        block.sort_attribute = "b"
        with pytest.raises(ValueError, match="not sorted"):
            write_block(block, tmp_path / "blk")
        assert not (tmp_path / "blk").exists()


class TestDataBlock:
    def test_project_and_records(self, block: DataBlock):
        p = block.project(["c", "a"])
        assert p.attributes == ["a", "c"]
        assert p.records()[0] == (block.columns["a"][0], block.columns["c"][0])
        with pytest.raises(SchemaError, match="not present"):
            p.project(["b"])

    def test_checksum_changes_with_content(self, block: DataBlock):
        before = block.checksum()
        block.columns["a"] = block.columns["a"].copy()
        assert block.checksum() == before
        block.columns["a"][0] += 1
        assert block.checksum() != before

    def test_validate_permutation(self, block: DataBlock):
        block.permutation = np.zeros(500, dtype=np.int64)
        with pytest.raises(ValueError, match="bijection"):
            block.validate()


class TestSparseClusteredIndex:
    def test_build(self):
        col = np.repeat(np.arange(10), 10)
        index = SparseClusteredIndex.build(col, "x", 16)
        assert len(index) == 7
        assert index.entries[:3] == [(0, 0), (1, 16), (3, 32)]
        index.validate(col)
        assert len(SparseClusteredIndex.build(np.arange(1000), "x", 128)) == 8

    def test_lookup_example(self):
        col = np.arange(4096)
        index = SparseClusteredIndex.build(col, "x", 1024)
        assert index.lookup(1024, 2047) == (0, 2048)
        assert index.lookup(1025, 2047) == (1024, 2048)
        assert index.lookup(5000, 6000) == (3072, 4096)
        assert index.lookup(-10, -1) is None

    def test_validate(self):
        index = SparseClusteredIndex("x", 2, np.array([3, 1]), np.array([0, 2], dtype=np.uint64), 4)
        with pytest.raises(BlockFormatError, match="non-decreasing"):
            index.validate()
        with pytest.raises(ValueError, match="positive"):
            SparseClusteredIndex.build(np.arange(3), "x", 0)

    @settings(max_examples=200, deadline=None)
    @given(
        values=st.lists(st.integers(-50, 50), min_size=1, max_size=300),
        page=st.integers(1, 40),
        bounds=st.tuples(st.integers(-60, 60), st.integers(-60, 60)),
    )
    def test_lookup_covers_every_qualifying_record(self, values, page, bounds):
        col = np.sort(np.array(values))
        lo, hi = min(bounds), max(bounds)
        index = SparseClusteredIndex.build(col, "x", page)
        qualifying = np.flatnonzero((col >= lo) & (col <= hi))
        span = index.lookup(lo, hi)
        if not len(qualifying):
            if span is not None:
                start, end = span
                assert not np.any((col[start:end] >= lo) & (col[start:end] <= hi))
            return
        start, end = span
        assert start <= qualifying[0] and qualifying[-1] < end
        assert start % page == 0


class TestPaths:
    def test_layout(self, tmp_path: Path):
        assert normal_replica_path(3, tmp_path) == tmp_path / "blocks" / "blk_3"
        assert pseudo_replica_path(3, "d", tmp_path) == tmp_path / "pseudo" / "blk_3" / "d"
        assert pseudo_temp_path(3, "d", "n1", tmp_path) == tmp_path / "pseudo" / "blk_3" / ".d.tmp.n1"
        with pytest.raises(SchemaError):
            pseudo_replica_path(3, "../d")
