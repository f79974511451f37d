from __future__ import annotations

import threading
from typing import TYPE_CHECKING

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lazyidx import indexer as indexer_module
from lazyidx.block_store import DataBlock, SchemaError, pseudo_replica_path, read_block
from lazyidx.indexer import (
    AdaptiveIndexer,
    OfferedBlock,
    OfferMode,
    OfferOutcome,
    OfferPolicy,
    PermutationVector,
    WriteOutcome,
    build_index,
    write_pseudo_replica,
)
from lazyidx.registry import BlockReplicaInfo, ReplicaKind, ReplicaRegistry

from .conftest import SCHEMA, make_columns

if TYPE_CHECKING:
    from pathlib import Path


def new_registry(n_blocks: int = 4) -> ReplicaRegistry:
    registry = ReplicaRegistry(SCHEMA, replication=1)
    for block_id in range(n_blocks):
        registry.add_block(block_id)
        registry.register_normal(
            block_id, BlockReplicaInfo(0, ReplicaKind.NORMAL, f"blk_{block_id}", None, frozenset(SCHEMA.names))
        )
    return registry


def offered(block: DataBlock, attribute: str = "d", nonce: str = "n") -> OfferedBlock:
    return OfferedBlock(block, attribute, block.checksum(), nonce)


class FakeIndexer:
    def __init__(self, accept: bool = True):
        self.accept = accept
        self.items = []

    def offer(self, item) -> bool:
        if self.accept:
            self.items.append(item)
        return self.accept


class TestPermutationVector:
    def test_example(self):
        perm = PermutationVector.from_sort(np.array([30, 10, 20, 10]))
        np.testing.assert_array_equal(perm.perm, [3, 0, 2, 1])
        np.testing.assert_array_equal(perm.order, [1, 3, 2, 0])
        np.testing.assert_array_equal(perm.apply(np.array(["w", "x", "y", "z"])), ["x", "z", "y", "w"])
        assert perm.is_bijection()
        with pytest.raises(ValueError, match="length"):
            perm.apply(np.arange(3))
        np.testing.assert_array_equal(PermutationVector.from_sort(np.array([5, 1, 3])).perm, [2, 0, 1])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.int64, st.integers(0, 2000), elements=st.integers(-20, 20)))
    def test_sort_properties(self, column):
        perm = PermutationVector.from_sort(column)
        assert perm.is_bijection()
        sorted_col = perm.apply(column)
        assert np.all(sorted_col[1:] >= sorted_col[:-1])
        np.testing.assert_array_equal(perm.invert(sorted_col), column)
        # Stable: equal keys keep their original relative order.
        order = perm.order
        same = sorted_col[1:] == sorted_col[:-1]
        assert np.all(order[1:][same] > order[:-1][same])
        assert PermutationVector(perm.perm) == perm


def check_build(columns: dict[str, np.ndarray], attribute: str, page: int) -> None:
    block = DataBlock(0, SCHEMA, columns)
    sorted_block, perm, index = build_index(block, attribute, page)
    sorted_block.validate()
    col = sorted_block.columns[attribute]
    assert np.all(col[1:] >= col[:-1])
    # Records stay intact: every row of the sorted block is a row of the input.
    for name in columns:
        np.testing.assert_array_equal(sorted_block.columns[name], perm.apply(columns[name]))
        np.testing.assert_array_equal(sorted_block.columns[name][perm.perm], columns[name])
    assert index.page_size_records == page
    assert len(index) == -(-len(col) // page)
    np.testing.assert_array_equal(index.first_keys, col[::page])


class TestBuildIndex:
    def test_aligned_columns(self):
        columns = {"a": np.array([3, 1, 2, 1]), "b": np.array([10, 20, 30, 40])}
        block = DataBlock.from_columns(4, SCHEMA, columns)
        sorted_block, perm, index = build_index(block, "a", 2)
        assert sorted_block.records(["a", "b"]) == [(1, 20), (1, 40), (2, 30), (3, 10)]
        assert sorted_block.sort_attribute == "a"
        assert index.entries == [(1, 0), (2, 2)]
        with pytest.raises(SchemaError, match="not present"):
            build_index(block, "c")

    @settings(max_examples=100, deadline=None)
    @given(rows=st.integers(1, 3000), seed=st.integers(0, 2**16), page=st.integers(1, 300))
    def test_random_blocks(self, rows, seed, page):
        check_build(make_columns(rows, seed), "b", page)

    @pytest.mark.slow
    @settings(max_examples=1000, deadline=None)
    @given(
        rows=st.integers(1, 10_000),
        seed=st.integers(0, 2**32 - 1),
        attribute=st.sampled_from(["a", "b", "c", "e"]),
        page=st.integers(1, 2048),
    )
    def test_many_random_blocks(self, rows, seed, attribute, page):
        check_build(make_columns(rows, seed), attribute, page)


class TestWritePseudoReplica:
    def test_write_and_register(self, tmp_path: Path):
        registry = new_registry()
        block, _, _ = build_index(DataBlock(1, SCHEMA, make_columns(100)), "d", 16)
        assert write_pseudo_replica(block, 0, tmp_path, registry, "x") is WriteOutcome.WON
        info = registry.find_index(1, "d")
        assert info.kind is ReplicaKind.PSEUDO
        assert info.path == str(pseudo_replica_path(1, "d", tmp_path))
        assert read_block(info.path) == block
        assert list(pseudo_replica_path(1, "d", tmp_path).parent.iterdir()) == [pseudo_replica_path(1, "d", tmp_path)]
        assert write_pseudo_replica(block, 0, tmp_path, registry, "y") is WriteOutcome.LOST

    def test_partial_block_registers_partial_replica(self, tmp_path: Path):
        registry = new_registry()
        block = DataBlock(2, SCHEMA, make_columns(100)).project(["b", "d"])
        sorted_block, perm, _ = build_index(block, "d", 16)
        sorted_block.permutation = perm.perm
        assert write_pseudo_replica(sorted_block, 0, tmp_path, registry) is WriteOutcome.WON
        info = registry.find_index(2, "d")
        assert info.kind is ReplicaKind.PARTIAL_PSEUDO
        assert info.has_permutation_vector
        assert info.available_attributes == {"b", "d"}

    def test_unsorted_block_is_refused(self, tmp_path: Path):
        with pytest.raises(ValueError, match="sorted and indexed"):
            write_pseudo_replica(DataBlock(0, SCHEMA, make_columns(10)), 0, tmp_path, new_registry())

    def test_concurrent_writers(self, tmp_path: Path):
        block, _, _ = build_index(DataBlock(3, SCHEMA, make_columns(200)), "b", 32)
        for rep in range(100):
            registry = new_registry()
            root = tmp_path / f"rep{rep}"
            barrier = threading.Barrier(2)
            outcomes = []

            def write(nonce):
                barrier.wait()
                outcomes.append(write_pseudo_replica(block, 0, root, registry, nonce))

            threads = [threading.Thread(target=write, args=(n,)) for n in ("first", "second")]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sorted(o.value for o in outcomes) == ["lost", "won"]
            assert sum(r.indexed_attribute == "b" for r in registry.lookup(3)) == 1
            final = pseudo_replica_path(3, "b", root)
            assert list(final.parent.iterdir()) == [final]
            assert read_block(final) == block

    def test_storage_failure_leaves_nothing_behind(self, tmp_path: Path, monkeypatch):
        def broken_write(block, path):
            with open(path, "wb") as f:
                f.write(b"ADXB")
            raise OSError("disk full")

        monkeypatch.setattr(indexer_module, "write_block", broken_write)
        registry = new_registry()
        block, _, _ = build_index(DataBlock(0, SCHEMA, make_columns(50)), "d", 16)
        assert write_pseudo_replica(block, 0, tmp_path, registry) is WriteOutcome.FAILED
        assert registry.find_index(0, "d") is None
        assert list(pseudo_replica_path(0, "d", tmp_path).parent.iterdir()) == []

    def test_registry_failure_removes_the_file(self, tmp_path: Path):
        registry = new_registry(n_blocks=1)
        block, _, _ = build_index(DataBlock(5, SCHEMA, make_columns(50)), "d", 16)
        assert write_pseudo_replica(block, 0, tmp_path, registry) is WriteOutcome.FAILED
        assert not pseudo_replica_path(5, "d", tmp_path).exists()


class TestOfferPolicy:
    def test_quota(self):
        assert OfferPolicy.quota_for(0.1, 100) == 10
        assert OfferPolicy.quota_for(0.25, 40) == 10
        assert OfferPolicy.quota_for(0.01, 1) == 1
        assert OfferPolicy.quota_for(0.0, 100) == 0

    def test_offer_rate(self):
        policy = OfferPolicy.offer_rate(0.1)
        policy.begin_job(100, range(100))
        planned = [b for b in range(100) if policy.will_offer(b)]
        assert planned == list(range(9, 100, 10))
        fake = FakeIndexer()
        block = DataBlock(0, SCHEMA, make_columns(10))
        assert policy.offer(offered(block), 1.0, fake) is OfferOutcome.REJECTED_QUOTA
        for block_id in planned:
            block = DataBlock(block_id, SCHEMA, make_columns(10))
            assert policy.offer(offered(block), 0.0, fake) is OfferOutcome.ACCEPTED
        assert policy.accepted == 10
        assert len(fake.items) == 10
        assert policy.rejected == {OfferOutcome.REJECTED_QUOTA: 1}

    def test_quota_counts_all_job_blocks(self):
        policy = OfferPolicy.offer_rate(0.5)
        policy.begin_job(10, [7, 8, 9])
        assert policy.quota == 3
        policy.begin_job(10, range(10))
        assert policy.quota == 5
        assert policy.accepted == 0

    def test_queue_full_releases_the_slot(self):
        policy = OfferPolicy.offer_rate(1.0)
        policy.begin_job(2, [0, 1])
        block = DataBlock(0, SCHEMA, make_columns(10))
        assert policy.offer(offered(block), 0.5, FakeIndexer(accept=False)) is OfferOutcome.REJECTED_QUEUE_FULL
        assert policy.accepted == 0
        assert policy.offer(offered(block), 0.5, FakeIndexer()) is OfferOutcome.ACCEPTED

    def test_selectivity(self):
        policy = OfferPolicy.selectivity(0.8)
        assert policy.mode is OfferMode.SELECTIVITY
        policy.begin_job(3, [0, 1])
        fake = FakeIndexer()
        assert policy.offer(offered(DataBlock(0, SCHEMA, make_columns(5))), 0.9, fake) is OfferOutcome.ACCEPTED
        outcome = policy.offer(offered(DataBlock(1, SCHEMA, make_columns(5))), 0.5, fake)
        assert outcome is OfferOutcome.REJECTED_SELECTIVITY
        assert policy.admits(0.80)
        assert not policy.admits(0.79)
        at_most = OfferPolicy.selectivity(0.2, "at_most")
        assert at_most.admits(0.1)
        assert not at_most.admits(0.3)

    def test_invalid(self):
        with pytest.raises(ValueError, match="Offer rate"):
            OfferPolicy.offer_rate(1.5)
        with pytest.raises(ValueError, match="direction"):
            OfferPolicy.selectivity(0.5, "sideways")


class TestAdaptiveIndexer:
    def test_builds_and_writes(self, tmp_path: Path):
        registry = new_registry()
        block = DataBlock(1, SCHEMA, make_columns(300, seed=5))
        indexer = AdaptiveIndexer(0, tmp_path, registry, page_size_records=64).start()
        try:
            assert indexer.offer(offered(block, "c"))
            indexer.join()
        finally:
            indexer.close()
        assert indexer.stats.offered == 1
        assert indexer.stats.built == 1
        assert indexer.stats.won == 1
        info = registry.find_index(1, "c")
        assert read_block(info.path) == build_index(block, "c", 64)[0]

    def test_checksum_mismatch_is_dropped(self, tmp_path: Path):
        registry = new_registry()
        block = DataBlock(1, SCHEMA, make_columns(50))
        indexer = AdaptiveIndexer(0, tmp_path, registry)
        try:
            assert indexer.offer(OfferedBlock(block, "d", "not-the-checksum", "n"))
            indexer.join()
        finally:
            indexer.close()
        assert indexer.stats.checksum_mismatches == 1
        assert registry.find_index(1, "d") is None

    def test_full_build_queue_rejects(self, tmp_path: Path):
        registry = new_registry()
        started, release = threading.Event(), threading.Event()
        built = []

        def slow_build(item):
            started.set()
            release.wait(10)
            built.append(item.block.block_id)

        indexer = AdaptiveIndexer(0, tmp_path, registry, build_queue_capacity=1)
        indexer._build = slow_build
        try:
            assert indexer.offer(offered(DataBlock(0, SCHEMA, make_columns(5))))
            assert started.wait(10)
            assert indexer.offer(offered(DataBlock(1, SCHEMA, make_columns(5))))
            assert not indexer.offer(offered(DataBlock(2, SCHEMA, make_columns(5))))
            release.set()
            indexer.join()
        finally:
            release.set()
            indexer.close()
        assert built == [0, 1]
        assert indexer.stats.rejected_build_queue == 1

    def test_invalid_capacity(self, tmp_path: Path):
        with pytest.raises(ValueError, match="capacities"):
            AdaptiveIndexer(0, tmp_path, new_registry(), build_queue_capacity=0)
