from __future__ import annotations

import numpy as np
import pytest

from lazyidx.block_store import normal_replica_path, read_header
from lazyidx.execution import (
    BlockRef,
    InputSplit,
    JobSpec,
    Predicate,
    ScanKind,
    invisible_projection_columns,
    record_reader_scan,
)
from lazyidx.indexer import OfferPolicy
from lazyidx.registry import ReplicaKind
from lazyidx.scheduler import plan_job

from .conftest import SCHEMA, brute_force, make_columns


def run(cluster, job: JobSpec, policy: OfferPolicy | None = None):
    job = job.bind(cluster.schema)
    plan = plan_job(job, cluster.registry)
    if policy is not None:
        policy.begin_job(len(cluster.registry), [a.block_ids[0] for a in plan if a.scan_kind is ScanKind.FULL_SCAN])
    return cluster.run_wave(plan, job, policy)


def output(results) -> list:
    return sorted(rec for r in results for rec in r.output)


class TestJobSpec:
    def test_from_dict(self):
        job = JobSpec.from_dict({"predicate": {"attr": "d", "low": 1, "high": 5}, "projection": ["b"]}, 2)
        assert job.job_id == "job3"
        assert job.predicate == Predicate("d", 1, 5)
        assert job.projection == ("b",)
        assert job.offer_rate is None

    def test_bind(self):
        job = JobSpec("j", Predicate("e", "s1", "s5"), projection=["f", "a"]).bind(SCHEMA)
        assert job.projection == ("a", "f")
        assert job.predicate.low == b"s1"
        assert JobSpec("j", Predicate("d", "1", 2.0)).bind(SCHEMA).projection == tuple(SCHEMA.names)
        with pytest.raises(KeyError, match="Unknown attribute"):
            JobSpec("j", Predicate("zz", 1, 2)).bind(SCHEMA)
        with pytest.raises(KeyError, match="Unknown attributes"):
            JobSpec("j", Predicate("d", 1, 2), projection=["nope"]).bind(SCHEMA)
        with pytest.raises(ValueError, match="Empty predicate"):
            JobSpec("j", Predicate("d", 5, 2)).bind(SCHEMA)

    def test_fractional_bounds(self):
        pred = Predicate("a", 2.5, 9).bind(SCHEMA)
        assert (pred.low, pred.high) == (3, 9)
        np.testing.assert_array_equal(pred.mask(np.array([2, 3])), [False, True])
        pred = Predicate("a", 2.2, 2.8).bind(SCHEMA)
        assert not pred.mask(np.arange(10)).any()
        assert pred.exact_range(np.arange(10)) == (3, 3)
        with pytest.raises(ValueError, match="Empty predicate"):
            Predicate("a", 3, 2.5).bind(SCHEMA)

    @pytest.mark.parametrize(("low", "high"), [(2.5, 7.5), (2.2, 2.8), (-0.5, 0.5)])
    def test_fractional_bounds_match_brute_force(self, make_cluster, low, high):
        columns = make_columns(1200)
        cluster = make_cluster(columns, nodes=3, block_records=400, upload_index_attributes=["a"])
        results = run(cluster, JobSpec("j", Predicate("a", low, high), projection=("f",)))
        assert all(r.scan_kind is ScanKind.INDEX_SCAN and r.ok for r in results)
        assert output(results) == brute_force(columns, "a", low, high, ["f"])

    def test_predicate_exact_range(self):
        pred = Predicate("x", 3, 5)
        col = np.array([1, 2, 3, 3, 4, 5, 6])
        assert pred.exact_range(col) == (2, 6)
        np.testing.assert_array_equal(pred.mask(col), [0, 0, 1, 1, 1, 1, 0])
        assert Predicate("x", 10, 20).exact_range(col) == (7, 7)


class TestInvisibleProjection:
    def test_columns(self):
        job = JobSpec("j", Predicate("d", 0, 1), projection=("b",))
        assert invisible_projection_columns(job, SCHEMA, will_offer=True) == SCHEMA.names
        assert invisible_projection_columns(job, SCHEMA, will_offer=False) == ["b", "d"]
        full = JobSpec("j", Predicate("d", 0, 1))
        assert invisible_projection_columns(full, SCHEMA, True) == invisible_projection_columns(full, SCHEMA, False)

    def test_offered_blocks_are_read_in_full(self, make_cluster):
        cluster = make_cluster(make_columns(800), nodes=3, block_records=400)
        job = JobSpec("j", Predicate("d", 0, 50_000), projection=("b",))
        offered = run(cluster, job, OfferPolicy.offer_rate(1.0))
        size = normal_replica_path(0, cluster.node_root(0)).stat().st_size
        assert [r.bytes_read for r in offered] == [size, size]
        assert [r.blocks_indexed for r in offered] == [1, 1]
        assert cluster.registry.indexed_block_count("d") == 2
        assert all(isinstance(rec, tuple) and len(rec) == 1 for rec in output(offered))


class TestRecordReader:
    def test_index_scan_reads_only_qualifying_records(self, make_cluster):
        columns = make_columns(4096)
        columns["d"] = np.random.default_rng(1).permutation(4096)
        cluster = make_cluster(
            columns, nodes=1, replication=1, block_records=4096, page_size_records=1024, upload_index_attributes=["d"]
        )
        job = JobSpec("j", Predicate("d", 1024, 2047), projection=("a", "b", "c", "d"))
        (result,) = run(cluster, job)
        assert result.scan_kind is ScanKind.INDEX_SCAN
        assert result.records_read == 1024
        assert result.records_emitted == 1024
        assert output([result]) == brute_force(columns, "d", 1024, 2047, ["a", "b", "c", "d"])
        path = normal_replica_path(0, cluster.node_root(0))
        header = read_header(path)
        # Header with its index, two pages of keys and the exact rows of a, b and c.
        assert result.bytes_read == header.header_bytes + 2 * 1024 * 8 + 1024 * 3 * 8
        assert result.bytes_read < path.stat().st_size / 2

    def test_zero_qualifying_records_still_offered(self, make_cluster):
        cluster = make_cluster(make_columns(400), nodes=3, block_records=400)
        job = JobSpec("j", Predicate("d", -10, -1))
        (result,) = run(cluster, job, OfferPolicy.offer_rate(1.0))
        assert result.records_emitted == 0
        assert result.records_read == 400
        assert result.blocks_offered == 1
        assert cluster.registry.find_index(0, "d").kind is ReplicaKind.PSEUDO

    def test_full_and_index_scans_agree(self, make_cluster):
        columns = make_columns(4000, seed=11)
        cluster = make_cluster(columns)
        rng = np.random.default_rng(2)
        run(cluster, JobSpec("warmup", Predicate("b", 0, 0)), OfferPolicy.offer_rate(0.5))
        assert 0 < cluster.registry.indexed_block_count("b") < len(cluster.registry)
        for i in range(10):
            lo = int(rng.integers(0, 1000))
            hi = lo + int(rng.integers(0, 200))
            job = JobSpec(f"q{i}", Predicate("b", lo, hi), projection=("a", "c", "e"))
            results = run(cluster, job)
            assert {r.scan_kind for r in results} == {ScanKind.INDEX_SCAN, ScanKind.FULL_SCAN}
            assert output(results) == brute_force(columns, "b", lo, hi, ["a", "c", "e"])

    def test_index_scan_reads_less(self, make_cluster):
        columns = make_columns(4000)
        cluster = make_cluster(columns, upload_index_attributes=["b"])
        plain = make_cluster(columns, name="plain")
        job = JobSpec("j", Predicate("b", 100, 105))
        indexed = sum(r.bytes_read for r in run(cluster, job))
        scanned = sum(r.bytes_read for r in run(plain, job))
        assert indexed < scanned / 10

    def test_map_fn(self, make_cluster):
        columns = make_columns(800)
        cluster = make_cluster(columns, nodes=3)
        job = JobSpec(
            "j", Predicate("a", 0, 9), projection=("a", "f"), map_fn=lambda rec: rec["f"] if rec["a"] == 3 else None
        )
        results = run(cluster, job)
        assert output(results) == sorted(columns["f"][columns["a"] == 3].tolist())
        assert sum(r.records_read for r in results) == 800

    def test_failing_task_is_reported(self, make_cluster):
        cluster = make_cluster(make_columns(800), nodes=3)
        job = JobSpec("j", Predicate("d", 0, 10)).bind(cluster.schema)
        plan = plan_job(job, cluster.registry)
        ref = plan[0].split.block_refs[0]
        split = InputSplit(plan[0].node_id, (BlockRef(ref.block_id, ref.replica),), ScanKind.FULL_SCAN)
        ctx = cluster.task_context()
        normal_replica_path(ref.block_id, cluster.node_root(split.node_id)).unlink()
        result = record_reader_scan(split, job, ctx, task_id=3)
        assert not result.ok
        assert "FileNotFoundError" in result.error
        assert result.task_id == 3

    def test_index_scan_on_unindexed_replica_fails(self, make_cluster):
        cluster = make_cluster(make_columns(400), nodes=3)
        job = JobSpec("j", Predicate("d", 0, 10)).bind(cluster.schema)
        replica = cluster.registry.normal_replicas(0)[0]
        split = InputSplit(replica.node_id, (BlockRef(0, replica),), ScanKind.INDEX_SCAN)
        result = record_reader_scan(split, job, cluster.task_context())
        assert "not clustered" in result.error


class TestInputSplit:
    def test_validation(self, make_cluster):
        cluster = make_cluster(make_columns(800), nodes=3)
        r0 = cluster.registry.normal_replicas(0)[0]
        with pytest.raises(ValueError, match="at least one"):
            InputSplit(0, (), ScanKind.FULL_SCAN)
        with pytest.raises(ValueError, match="exactly one"):
            InputSplit(r0.node_id, (BlockRef(0, r0), BlockRef(0, r0)), ScanKind.FULL_SCAN)
        with pytest.raises(ValueError, match="not local"):
            InputSplit(r0.node_id + 1, (BlockRef(0, r0),), ScanKind.FULL_SCAN)
        assert InputSplit(r0.node_id, (BlockRef(0, r0),), ScanKind.INDEX_SCAN).block_ids == (0,)
