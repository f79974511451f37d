"""
Map task execution: jobs, input splits and the record reader.

The record reader decides per split how to read its blocks. Blocks of an
index-scan split are served from a replica clustered on the predicate
attribute: the sparse index narrows the read to the pages that can hold
qualifying records and only the qualifying rows of the projected columns
are read. A full-scan split reads one unsorted block, applies the predicate
to every record and, when the offer policy picks the block, hands it to the
node's Adaptive Indexer once the map function is done with it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from lazyidx import lazy_projection
from lazyidx.block_store import BlockFile, DataBlock, SchemaError, read_block
from lazyidx.indexer import CompletionRequest, OfferedBlock, OfferOutcome, PermutationVector
from lazyidx.io import ByteCounter
from lazyidx.registry import ReplicaKind

if TYPE_CHECKING:
    from typing import Any, Callable, Mapping

    from lazyidx.block_store import Schema
    from lazyidx.indexer import AdaptiveIndexer, OfferPolicy
    from lazyidx.policy import CostModel
    from lazyidx.registry import BlockReplicaInfo, ReplicaRegistry

logger = logging.getLogger(__name__)


class ScanKind(Enum):
    INDEX_SCAN = "index"
    FULL_SCAN = "full"


class ProjectionMode(Enum):
    INVISIBLE = "invisible_projection"
    LAZY = "lazy_projection"


@dataclass(frozen=True)
class Predicate:
    """Closed range selection low <= attribute <= high."""

    attribute: str
    low: Any
    high: Any

    def bind(self, schema: Schema) -> Predicate:
        """
        Checks the attribute and converts the bounds to its value type.
        Rounding may leave an empty range, e.g. [2.2, 2.8] on an integer.
        """
        low = schema.coerce(self.attribute, self.low, "low")
        high = schema.coerce(self.attribute, self.high, "high")
        try:
            inverted = self.low > self.high
        except TypeError:
            inverted = low > high
        if inverted:
            raise ValueError(f"Empty predicate range [{self.low}, {self.high}] on {self.attribute!r}")
        return Predicate(self.attribute, low, high)

    def mask(self, column: np.ndarray) -> np.ndarray:
        return (column >= self.low) & (column <= self.high)

    def exact_range(self, sorted_column: np.ndarray) -> tuple[int, int]:
        """Qualifying [start, end) of a sorted column."""
        start = int(np.searchsorted(sorted_column, self.low, side="left"))
        end = int(np.searchsorted(sorted_column, self.high, side="right"))
        return start, max(start, end)


@dataclass
class JobSpec:
    """
    A selective map-only job.

    Args:
        job_id: Name used in reports and temp file nonces.
        predicate: Range selection on one attribute.
        projection: Attributes the map function sees. None means all.
        map_fn: Called with every qualifying record as a {name: value}
            dict; None results are dropped. Defaults to emitting the
            projected values as a tuple.
        offer_rate: Constant offer rate for this job.
        eager: Run this job with eager adaptive indexing.
        selectivity_threshold: Offer blocks by qualifying fraction.
        collect_output: Keep emitted records in the task results.
    """

    job_id: str
    predicate: Predicate
    projection: tuple[str, ...] | None = None
    map_fn: Callable[[dict], Any] | None = None
    offer_rate: float | None = None
    eager: bool | None = None
    selectivity_threshold: float | None = None
    collect_output: bool = True

    def __post_init__(self):
        if self.projection is not None:
            self.projection = tuple(self.projection)

    @classmethod
    def from_dict(cls, d: Mapping, position: int = 0) -> JobSpec:
        """
        Job file entry: {job_id, predicate: {attr, low, high}, projection,
        offer_rate | eager | selectivity_threshold}.
        """
        pred = d["predicate"]
        return cls(
            job_id=str(d.get("job_id", f"job{position + 1}")),
            predicate=Predicate(pred["attr"], pred["low"], pred["high"]),
            projection=d.get("projection"),
            offer_rate=d.get("offer_rate"),
            eager=d.get("eager"),
            selectivity_threshold=d.get("selectivity_threshold"),
        )

    def bind(self, schema: Schema) -> JobSpec:
        """Validates the job against a schema; projection comes back in schema order."""
        projection = schema.names if self.projection is None else schema.ordered(self.projection)
        return replace(self, predicate=self.predicate.bind(schema), projection=tuple(projection))


class BlockRef(NamedTuple):
    block_id: int
    replica: BlockReplicaInfo


@dataclass(frozen=True)
class InputSplit:
    """Blocks one map task reads, all from replicas on node_id."""

    node_id: int
    block_refs: tuple[BlockRef, ...]
    scan_kind: ScanKind

    def __post_init__(self):
        if not self.block_refs:
            raise ValueError("An input split needs at least one block")
        if self.scan_kind is ScanKind.FULL_SCAN and len(self.block_refs) != 1:
            raise ValueError("A full-scan split holds exactly one block")
        for ref in self.block_refs:
            if ref.replica.node_id != self.node_id:
                raise ValueError(f"Block {ref.block_id} is not local to node {self.node_id}")

    @property
    def block_ids(self) -> tuple[int, ...]:
        return tuple(ref.block_id for ref in self.block_refs)


@dataclass(frozen=True)
class TaskResult:
    """Metrics (and optionally output) of one map task."""

    task_id: int
    node_id: int
    scan_kind: ScanKind
    block_ids: tuple[int, ...]
    records_read: int = 0
    records_emitted: int = 0
    bytes_read: int = 0
    blocks_offered: int = 0
    blocks_indexed: int = 0
    blocks_rejected: int = 0
    completions_requested: int = 0
    completions_skipped: int = 0
    elapsed: float = 0.0
    wall_seconds: float = 0.0
    wave: int = 0
    output: tuple | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class TaskContext:
    """What a task needs from the cluster."""

    registry: ReplicaRegistry
    cost: CostModel
    projection_mode: ProjectionMode = ProjectionMode.INVISIBLE
    offer_policy: OfferPolicy | None = None
    indexer_for: Callable[[int], AdaptiveIndexer] | None = None

    @property
    def schema(self) -> Schema:
        return self.registry.schema


def invisible_projection_columns(job: JobSpec, schema: Schema, will_offer: bool) -> list[str]:
    """
    Attributes a full scan reads: the whole schema for blocks that will be
    offered to the indexer, else the projection plus the predicate attribute.
    """
    if will_offer:
        return schema.names
    projection = schema.names if job.projection is None else job.projection
    return schema.ordered({*projection, job.predicate.attribute})


@dataclass
class _Tally:
    records_read: int = 0
    records_emitted: int = 0
    blocks_offered: int = 0
    blocks_indexed: int = 0
    blocks_rejected: int = 0
    completions_requested: int = 0
    completions_skipped: int = 0
    output: list = field(default_factory=list)


class RecordReader:
    """
    Reads the blocks of one split and feeds the qualifying records to the
    job's map function. One instance per task.
    """

    def __init__(self, split: InputSplit, job: JobSpec, ctx: TaskContext, task_id: int = 0):
        self.split = split
        self.job = job
        self.ctx = ctx
        self.task_id = task_id
        self.counter = ByteCounter()
        self._tally = _Tally()

    def scan(self) -> TaskResult:
        """Processes the split. Failures are returned, not raised."""
        start = time.perf_counter()
        error = None
        try:
            for ref in self.split.block_refs:
                if self.split.scan_kind is ScanKind.INDEX_SCAN:
                    self._index_scan(ref)
                else:
                    self._full_scan(ref)
        except Exception as exc:
            error = f"{type(exc).__name__}: {exc}"
            logger.error(f"Task {self.task_id} of job {self.job.job_id} failed on node {self.split.node_id}: {error}")
        t = self._tally
        return TaskResult(
            task_id=self.task_id,
            node_id=self.split.node_id,
            scan_kind=self.split.scan_kind,
            block_ids=self.split.block_ids,
            records_read=t.records_read,
            records_emitted=t.records_emitted,
            bytes_read=self.counter.total,
            blocks_offered=t.blocks_offered,
            blocks_indexed=t.blocks_indexed,
            blocks_rejected=t.blocks_rejected,
            completions_requested=t.completions_requested,
            completions_skipped=t.completions_skipped,
            elapsed=self.ctx.cost.task_seconds(self.counter.total),
            wall_seconds=time.perf_counter() - start,
            output=tuple(t.output) if self.job.collect_output else None,
            error=error,
        )

    def _emit(self, columns: Mapping[str, np.ndarray], n: int) -> None:
        names = list(self.job.projection)
        if names:
            records = zip(*(columns[name].tolist() for name in names))
        else:
            records = (() for _ in range(n))
        emitted = 0
        for rec in records:
            if self.job.map_fn is not None:
                rec = self.job.map_fn(dict(zip(names, rec)))
                if rec is None:
                    continue
            emitted += 1
            if self.job.collect_output:
                self._tally.output.append(rec)
        self._tally.records_emitted += emitted

    def _full_scan(self, ref: BlockRef) -> None:
        pred = self.job.predicate
        policy = self.ctx.offer_policy
        will_offer = policy is not None and self.ctx.indexer_for is not None and policy.will_offer(ref.block_id)
        if self.ctx.projection_mode is ProjectionMode.LAZY:
            names = invisible_projection_columns(self.job, self.ctx.schema, False)
        else:
            names = invisible_projection_columns(self.job, self.ctx.schema, will_offer)
        block = read_block(ref.replica.path, names, counter=self.counter)
        mask = pred.mask(block.columns[pred.attribute])
        self._tally.records_read += block.record_count
        self._emit({name: block.columns[name][mask] for name in self.job.projection}, int(mask.sum()))
        if not will_offer:
            return

        # The map function is done with the block; only now may the indexer see it.
        qualifying = float(mask.mean()) if block.record_count else 0.0
        unsorted = DataBlock(block.block_id, block.schema, block.columns, record_count=block.record_count)
        item = OfferedBlock(
            block=unsorted,
            attribute=pred.attribute,
            checksum=unsorted.checksum(),
            nonce=f"{self.job.job_id}-{self.task_id}",
        )
        outcome = policy.offer(item, qualifying, self.ctx.indexer_for(self.split.node_id))
        self._tally.blocks_offered += 1
        if outcome is OfferOutcome.ACCEPTED:
            self._tally.blocks_indexed += 1
        else:
            self._tally.blocks_rejected += 1
        logger.debug(f"Block {ref.block_id} offered on {pred.attribute!r}: {outcome.value}")

    def _index_scan(self, ref: BlockRef) -> None:
        pred = self.job.predicate
        with BlockFile(ref.replica.path, self.counter) as bf:
            header = bf.header
            index = bf.index
            if index is None or header.sort_attribute != pred.attribute:
                raise SchemaError(f"Replica {ref.replica.path} is not clustered on {pred.attribute!r}")
            span = index.lookup(pred.low, pred.high)
            keys = None
            lo = hi = 0
            if span is not None:
                keys = bf.read_columns([pred.attribute], span)[pred.attribute]
                lo, hi = pred.exact_range(keys)
                self._tally.records_read += hi - lo
            rows = (span[0] + lo, span[0] + hi) if span is not None else (0, 0)

            wanted = [n for n in self.job.projection if n != pred.attribute]
            available = set(header.available_attributes)
            missing = [n for n in wanted if n not in available]
            served = self._missing_columns(ref, missing, bf, rows if hi > lo else None) if missing else {}
            if hi == lo:
                return
            columns = bf.read_columns([n for n in wanted if n in available], rows)
            columns[pred.attribute] = keys[lo:hi]
            columns.update(served)
        self._emit(columns, hi - lo)

    def _missing_columns(
        self, ref: BlockRef, missing: list[str], bf: BlockFile, rows: tuple[int, int] | None
    ) -> dict[str, np.ndarray]:
        """
        Attributes a partial pseudo replica lacks. When the node holds a
        normal replica of the block they are read from it and queued for
        appending to the partial replica, whether or not any record of the
        block qualifies. Qualifying rows in ``rows`` are served from the
        reordered columns, falling back to a remote normal replica.
        """
        normals = self.ctx.registry.normal_replicas(ref.block_id)
        local = [r for r in normals if r.node_id == self.split.node_id]
        indexer = self.ctx.indexer_for(self.split.node_id) if self.ctx.indexer_for else None
        completes = bool(local) and indexer is not None and ref.replica.kind is ReplicaKind.PARTIAL_PSEUDO

        self._tally.completions_requested += 1
        if not completes:
            self._tally.completions_skipped += 1
            logger.info(f"Completion of block {ref.block_id} on {ref.replica.indexed_attribute!r} skipped")
            if rows is None:
                return {}

        source = local[0] if local else min(normals, key=lambda r: r.node_id)
        unsorted = lazy_projection.read_missing(source.path, missing, self.counter)
        perm = PermutationVector(bf.read_permutation())
        if completes:
            request = CompletionRequest(
                block_id=ref.block_id,
                attribute=ref.replica.indexed_attribute,
                path=ref.replica.path,
                columns=unsorted,
                permutation=perm,
                nonce=f"{self.job.job_id}-{self.task_id}-c",
            )
            if not indexer.offer(request):
                self._tally.completions_skipped += 1
        if rows is None:
            return {}
        aligned = lazy_projection.reorder_missing(perm, unsorted)
        return {name: col[rows[0] : rows[1]] for name, col in aligned.items()}


def record_reader_scan(split: InputSplit, job: JobSpec, ctx: TaskContext, task_id: int = 0) -> TaskResult:
    """
    Runs one map task over a split.

    Args:
        split: Blocks to read.
        job: Job bound to the dataset schema.
        ctx: Registry, cost model, projection mode, offer policy and the
            node's Adaptive Indexer.
        task_id: Task number within the job.

    Returns:
        TaskResult; a failing task has error set.
    """
    return RecordReader(split, job, ctx, task_id).scan()
