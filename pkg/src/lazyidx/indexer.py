"""
The Adaptive Indexer of a node.

Map tasks hand fully scanned blocks over a bounded build queue to an Index
Builder thread, which sorts the block on the predicate attribute, reorders
every other column with the resulting permutation vector and builds a sparse
clustered index. The sorted block then travels over a bounded write queue to
an Index Writer thread, which stores it as a pseudo replica (temporary file,
then a publish that only the first writer wins) and registers it.

Offers never block a map task: a full queue rejects the block, and indexing
failures are logged and counted but never fail a job.
"""

from __future__ import annotations

import logging
import queue
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from lazyidx.block_store import (
    DEFAULT_PAGE_SIZE,
    DataBlock,
    SchemaError,
    SparseClusteredIndex,
    pseudo_replica_path,
    pseudo_temp_path,
    write_block,
)
from lazyidx.itertools import evenly_spaced
from lazyidx.os import makedirs_p, publish_once, remove_quietly
from lazyidx.registry import BlockReplicaInfo, RegistryError, ReplicaKind

if TYPE_CHECKING:
    from typing import Iterable, Union

    from lazyidx.registry import ReplicaRegistry

logger = logging.getLogger(__name__)

_STOP = object()


@dataclass(frozen=True, eq=False)
class PermutationVector:
    """
    Old position -> new position map of a sort: new_column[perm[i]] =
    old_column[i].
    """

    perm: np.ndarray

    @classmethod
    def from_sort(cls, column: np.ndarray) -> PermutationVector:
        """Stable sort of column; equal keys keep their relative order."""
        order = np.argsort(column, kind="stable")
        perm = np.empty(len(order), dtype=np.int64)
        perm[order] = np.arange(len(order), dtype=np.int64)
        return cls(perm)

    def __len__(self) -> int:
        return len(self.perm)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PermutationVector):
            return NotImplemented
        return np.array_equal(self.perm, other.perm)

    @property
    def order(self) -> np.ndarray:
        """New position -> old position, i.e. the inverse permutation."""
        order = np.empty_like(self.perm)
        order[self.perm] = np.arange(len(self.perm), dtype=self.perm.dtype)
        return order

    def is_bijection(self) -> bool:
        return np.array_equal(np.sort(self.perm), np.arange(len(self.perm)))

    def apply(self, column: np.ndarray) -> np.ndarray:
        """Moves every value of column to its new position."""
        column = np.asarray(column)
        if len(column) != len(self.perm):
            raise ValueError(f"Column of length {len(column)} for a permutation of length {len(self.perm)}")
        out = np.empty_like(column)
        out[self.perm] = column
        return out

    def invert(self, column: np.ndarray) -> np.ndarray:
        """Undoes apply."""
        return np.asarray(column)[self.perm]


def build_index(
    block: DataBlock, attribute: str, page_size_records: int = DEFAULT_PAGE_SIZE
) -> tuple[DataBlock, PermutationVector, SparseClusteredIndex]:
    """
    Sorts a (possibly partial) block on attribute, reorders every present
    column with the permutation vector and builds a sparse clustered index
    over the sorted column.

    Args:
        block: Block to index; any subset of attributes that contains
            attribute.
        attribute: Index attribute.
        page_size_records: Records per index page.

    Returns:
        (sorted block, permutation vector, sparse index)
    """
    if attribute not in block.columns:
        raise SchemaError(f"Index attribute {attribute!r} is not present in block {block.block_id}")
    perm = PermutationVector.from_sort(block.columns[attribute])
    columns = {name: perm.apply(col) for name, col in block.columns.items()}
    index = SparseClusteredIndex.build(columns[attribute], attribute, page_size_records)
    sorted_block = DataBlock(
        block.block_id,
        block.schema,
        columns,
        record_count=block.record_count,
        sort_attribute=attribute,
        index=index,
    )
    return sorted_block, perm, index


class WriteOutcome(Enum):
    WON = "won"
    LOST = "lost"
    FAILED = "failed"


def write_pseudo_replica(
    block: DataBlock,
    node_id: int,
    node_root: Union[str, Path],
    registry: ReplicaRegistry,
    nonce: str | None = None,
) -> WriteOutcome:
    """
    Stores a sorted and indexed block as a pseudo replica (replication
    factor one, on the local node) and registers it.

    The block is written to pseudo/blk_<id>/.<attr>.tmp.<nonce> and then
    published under pseudo/blk_<id>/<attr>; only the first of several
    concurrent writers succeeds. A block that carries a permutation vector
    is registered as a partial pseudo replica.

    Returns:
        WON if this call published the replica, LOST if another writer was
        first, FAILED on a storage error. No exception escapes.
    """
    attribute = block.sort_attribute
    if attribute is None or block.index is None:
        raise ValueError(f"Block {block.block_id} must be sorted and indexed before it is written")
    final = pseudo_replica_path(block.block_id, attribute, node_root)
    tmp = pseudo_temp_path(block.block_id, attribute, nonce or uuid.uuid4().hex, node_root)
    try:
        makedirs_p(final.parent)
        write_block(block, tmp)
        won = publish_once(tmp, final)
    except OSError as exc:
        remove_quietly(tmp)
        logger.warning(f"Abandoned pseudo replica of block {block.block_id} on {attribute!r}: {exc}")
        return WriteOutcome.FAILED
    if not won:
        logger.debug(f"Lost the publish race for block {block.block_id} on {attribute!r}")
        return WriteOutcome.LOST

    partial = block.permutation is not None
    info = BlockReplicaInfo(
        node_id=node_id,
        kind=ReplicaKind.PARTIAL_PSEUDO if partial else ReplicaKind.PSEUDO,
        path=str(final),
        indexed_attribute=attribute,
        available_attributes=frozenset(block.columns),
        has_permutation_vector=partial,
    )
    try:
        registry.register_index(block.block_id, info)
    except RegistryError as exc:
        remove_quietly(final)
        logger.warning(f"Could not register pseudo replica of block {block.block_id}: {exc}")
        return WriteOutcome.FAILED
    return WriteOutcome.WON


class OfferOutcome(Enum):
    ACCEPTED = "accepted"
    REJECTED_QUOTA = "rejected_quota"
    REJECTED_SELECTIVITY = "rejected_selectivity"
    REJECTED_QUEUE_FULL = "rejected_queue_full"


class OfferMode(Enum):
    OFFER_RATE = "offer_rate"
    SELECTIVITY = "selectivity"


class OfferPolicy:
    """
    Decides which scanned blocks are handed to the Adaptive Indexer during
    one job.

    offer_rate: at most ceil(rho * n_blocks_in_job) blocks, picked round
    robin over the job's unindexed blocks before the scan starts, so the
    record reader knows up front which blocks need the full schema.

    selectivity: a block is offered when its qualifying fraction is at
    least (or, with direction "at_most", at most) the threshold. Every
    unindexed block is a candidate, so candidates are read in full.
    """

    def __init__(
        self,
        mode: OfferMode | str = OfferMode.OFFER_RATE,
        rho: float = 0.1,
        threshold: float = 0.8,
        direction: str = "at_least",
    ):
        self.mode = OfferMode(mode)
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"Offer rate must be in [0, 1], got {rho}")
        if not 0.0 <= threshold <= 1.0:
            raise ValueError(f"Selectivity threshold must be in [0, 1], got {threshold}")
        if direction not in ("at_least", "at_most"):
            raise ValueError(f"Unknown selectivity direction {direction!r}")
        self.rho = rho
        self.threshold = threshold
        self.direction = direction
        self._lock = threading.Lock()
        self._planned: frozenset[int] = frozenset()
        self.quota = 0
        self.accepted = 0
        self.rejected: dict[OfferOutcome, int] = {}

    @classmethod
    def offer_rate(cls, rho: float) -> OfferPolicy:
        return cls(OfferMode.OFFER_RATE, rho=rho)

    @classmethod
    def selectivity(cls, threshold: float = 0.8, direction: str = "at_least") -> OfferPolicy:
        return cls(OfferMode.SELECTIVITY, threshold=threshold, direction=direction)

    @staticmethod
    def quota_for(rho: float, n_blocks: int) -> int:
        """ceil(rho * n_blocks), tolerant of floating point noise."""
        return max(0, int(np.ceil(rho * n_blocks - 1e-9)))

    def begin_job(self, n_blocks_in_job: int, candidate_block_ids: Iterable[int]) -> None:
        """
        Resets the per-job state.

        Args:
            n_blocks_in_job: All input blocks of the job (indexed or not).
            candidate_block_ids: Blocks the job will full scan.
        """
        candidates = sorted(candidate_block_ids)
        with self._lock:
            self.accepted = 0
            self.rejected = {}
            if self.mode is OfferMode.OFFER_RATE:
                self.quota = min(self.quota_for(self.rho, n_blocks_in_job), len(candidates))
                self._planned = frozenset(evenly_spaced(candidates, self.quota))
            else:
                self.quota = len(candidates)
                self._planned = frozenset(candidates)

    def will_offer(self, block_id: int) -> bool:
        """Whether the block is a candidate, known before it is scanned."""
        return block_id in self._planned

    def admits(self, qualifying_fraction: float) -> bool:
        if self.direction == "at_least":
            return qualifying_fraction >= self.threshold
        return qualifying_fraction <= self.threshold

    def offer(self, item: OfferedBlock, qualifying_fraction: float, indexer: AdaptiveIndexer) -> OfferOutcome:
        """
        Offers a fully scanned block to the indexer.

        Returns:
            The outcome; rejections are normal and only counted.
        """
        block_id = item.block.block_id
        with self._lock:
            if self.mode is OfferMode.OFFER_RATE:
                if block_id not in self._planned or self.accepted >= self.quota:
                    outcome = OfferOutcome.REJECTED_QUOTA
                else:
                    outcome = None
            elif block_id not in self._planned or not self.admits(qualifying_fraction):
                outcome = OfferOutcome.REJECTED_SELECTIVITY
            else:
                outcome = None
            if outcome is None:
                # Reserve the quota slot before releasing the lock.
                self.accepted += 1
        if outcome is None:
            if indexer.offer(item):
                return OfferOutcome.ACCEPTED
            outcome = OfferOutcome.REJECTED_QUEUE_FULL
            with self._lock:
                self.accepted -= 1
        with self._lock:
            self.rejected[outcome] = self.rejected.get(outcome, 0) + 1
        return outcome


@dataclass(eq=False)
class OfferedBlock:
    """A scanned block handed from a map task to the Adaptive Indexer."""

    block: DataBlock
    attribute: str
    checksum: str
    nonce: str


@dataclass(eq=False)
class CompletionRequest:
    """
    Missing columns of a partial pseudo replica, in the normal replica's
    order, plus the replica's permutation vector.
    """

    block_id: int
    attribute: str
    path: Path
    columns: dict[str, np.ndarray]
    permutation: PermutationVector
    nonce: str


@dataclass
class IndexerStats:
    offered: int = 0
    rejected_build_queue: int = 0
    rejected_write_queue: int = 0
    built: int = 0
    won: int = 0
    lost: int = 0
    failed: int = 0
    checksum_mismatches: int = 0
    completions: int = 0
    completions_rejected: int = 0


@dataclass
class _WriteItem:
    block: DataBlock | None = None
    completion: tuple | None = None
    nonce: str = field(default_factory=lambda: uuid.uuid4().hex)


class AdaptiveIndexer:
    """
    Per-node Adaptive Indexer: bounded build queue -> builder thread ->
    bounded write queue -> writer thread. All map tasks of a node share one
    instance.
    """

    def __init__(
        self,
        node_id: int,
        node_root: Union[str, Path],
        registry: ReplicaRegistry,
        page_size_records: int = DEFAULT_PAGE_SIZE,
        build_queue_capacity: int = 4,
        write_queue_capacity: int = 4,
    ):
        if build_queue_capacity < 1 or write_queue_capacity < 1:
            raise ValueError("Queue capacities must be positive")
        self.node_id = node_id
        self.node_root = Path(node_root)
        self.registry = registry
        self.page_size_records = page_size_records
        self.build_queue: queue.Queue = queue.Queue(maxsize=build_queue_capacity)
        self.write_queue: queue.Queue = queue.Queue(maxsize=write_queue_capacity)
        self.stats = IndexerStats()
        self._stats_lock = threading.Lock()
        self._threads: list[threading.Thread] = []

    def _count(self, name: str, n: int = 1) -> None:
        with self._stats_lock:
            setattr(self.stats, name, getattr(self.stats, name) + n)

    def start(self) -> AdaptiveIndexer:
        if not self._threads:
            self._threads = [
                threading.Thread(
                    target=self._loop,
                    args=(self.build_queue, self._build),
                    daemon=True,
                    name=f"index-builder-{self.node_id}",
                ),
                threading.Thread(
                    target=self._loop,
                    args=(self.write_queue, self._write),
                    daemon=True,
                    name=f"index-writer-{self.node_id}",
                ),
            ]
            for t in self._threads:
                t.start()
        return self

    def offer(self, item: OfferedBlock | CompletionRequest) -> bool:
        """Non-blocking enqueue. False if the build queue is full."""
        self.start()
        try:
            self.build_queue.put_nowait(item)
        except queue.Full:
            if isinstance(item, CompletionRequest):
                self._count("completions_rejected")
            else:
                self._count("rejected_build_queue")
            return False
        if isinstance(item, OfferedBlock):
            self._count("offered")
        return True

    def join(self) -> None:
        """Blocks until every enqueued item has been built and written."""
        self.build_queue.join()
        self.write_queue.join()

    def close(self) -> None:
        if self._threads:
            self.build_queue.put(_STOP)
            self.write_queue.put(_STOP)
            for t in self._threads:
                t.join()
            self._threads = []

    def _loop(self, q: queue.Queue, handler) -> None:
        while True:
            item = q.get()
            try:
                if item is _STOP:
                    return
                handler(item)
            except Exception:
                self._count("failed")
                logger.exception(f"Indexing step failed on node {self.node_id}")
            finally:
                q.task_done()

    def _enqueue_write(self, item: _WriteItem) -> None:
        try:
            self.write_queue.put_nowait(item)
        except queue.Full:
            self._count("rejected_write_queue")
            logger.info(f"Write queue full on node {self.node_id}; dropping an indexed block")

    def _build(self, item: OfferedBlock | CompletionRequest) -> None:
        from lazyidx import lazy_projection

        if isinstance(item, CompletionRequest):
            aligned = {name: item.permutation.apply(col) for name, col in item.columns.items()}
            completion = (item.block_id, item.attribute, item.path, aligned)
            self._enqueue_write(_WriteItem(completion=completion, nonce=item.nonce))
            return

        if item.block.checksum() != item.checksum:
            self._count("checksum_mismatches")
            logger.warning(f"Block {item.block.block_id} changed after hand-off; not indexing it")
            return
        if item.block.is_complete:
            sorted_block, _, _ = build_index(item.block, item.attribute, self.page_size_records)
        else:
            sorted_block = lazy_projection.build_partial(item.block, item.attribute, self.page_size_records)
        self._count("built")
        self._enqueue_write(_WriteItem(block=sorted_block, nonce=item.nonce))

    def _write(self, item: _WriteItem) -> None:
        from lazyidx import lazy_projection

        if item.completion is not None:
            block_id, attribute, path, aligned = item.completion
            done = lazy_projection.complete_partial(
                block_id, attribute, path, aligned, self.registry, self.node_id, item.nonce
            )
            if done:
                self._count("completions")
            return
        outcome = write_pseudo_replica(item.block, self.node_id, self.node_root, self.registry, item.nonce)
        self._count(outcome.value)
