"""
A simulated shared-nothing cluster inside one process. Every node is a
directory under the cluster root holding its normal block replicas and the
pseudo replicas its Adaptive Indexer builds; map slots are threads.

Layout of a cluster root::

    cluster.json            configuration
    dataset.json            schema, replication factor, block ids
    registry.jsonl          replica registry journal
    calibration.json        eager indexing calibration
    node_<k>/blocks/blk_<id>
    node_<k>/pseudo/blk_<id>/<attr>
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from collections.abc import Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from lazyidx.block_store import DataBlock, normal_replica_path, write_block
from lazyidx.execution import ProjectionMode, TaskContext, record_reader_scan
from lazyidx.indexer import AdaptiveIndexer, build_index
from lazyidx.itertools import chunks
from lazyidx.json import MSONable
from lazyidx.logging import logged
from lazyidx.os import makedirs_p
from lazyidx.parallel import imap_threads
from lazyidx.policy import CostModel, PolicyConfig
from lazyidx.registry import DATASET_NAME, BlockReplicaInfo, ReplicaKind, ReplicaRegistry
from lazyidx.scheduler import ScheduleCountMode
from lazyidx.serialization import dumpfn, loadfn

if TYPE_CHECKING:
    from typing import Iterable, Iterator, Sequence, Union

    from lazyidx.block_store import Schema
    from lazyidx.execution import JobSpec, TaskResult
    from lazyidx.indexer import OfferPolicy
    from lazyidx.scheduler import TaskAssignment

logger = logging.getLogger(__name__)

CONFIG_NAME = "cluster.json"


class ClusterConfigError(ValueError):
    """Raised for invalid cluster configurations and dataset uploads."""


@dataclass
class ClusterConfig(MSONable):
    """
    Cluster and engine settings, read from YAML or JSON.

    Args:
        nodes: Number of nodes.
        slots_per_node: Map slots per node.
        replication: Normal replicas per block.
        storage_root: Directory holding the nodes.
        block_records: Records per block.
        block_bytes: If set, block size as a byte budget instead.
        page_size_records: Records per sparse index page.
        max_blocks_per_split: Cap on blocks in one index-scan split.
        build_queue_capacity: Blocks an Adaptive Indexer accepts before
            rejecting offers.
        write_queue_capacity: Built blocks waiting for the Index Writer.
        projection_mode: invisible_projection or lazy_projection.
        schedule_count_mode: per_attribute or total index counts.
        cost: Simulated clock.
        policy: Offer policy.
    """

    nodes: int
    slots_per_node: int = 1
    replication: int = 3
    storage_root: str = "cluster"
    block_records: int = 262144
    block_bytes: int | None = None
    page_size_records: int = 1024
    max_blocks_per_split: int = 16
    build_queue_capacity: int = 4
    write_queue_capacity: int = 4
    projection_mode: ProjectionMode = ProjectionMode.INVISIBLE
    schedule_count_mode: ScheduleCountMode = ScheduleCountMode.PER_ATTRIBUTE
    cost: CostModel = field(default_factory=CostModel)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        self.storage_root = str(self.storage_root)
        try:
            self.projection_mode = ProjectionMode(self.projection_mode)
            self.schedule_count_mode = ScheduleCountMode(self.schedule_count_mode)
            if isinstance(self.cost, Mapping):
                self.cost = CostModel(**{k: v for k, v in self.cost.items() if not k.startswith("@")})
            if isinstance(self.policy, Mapping):
                self.policy = PolicyConfig(**{k: v for k, v in self.policy.items() if not k.startswith("@")})
        except (TypeError, ValueError) as exc:
            raise ClusterConfigError(str(exc)) from exc

        positive = ("nodes", "slots_per_node", "replication", "block_records", "page_size_records",
                    "max_blocks_per_split", "build_queue_capacity", "write_queue_capacity")  # fmt: skip
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ClusterConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.block_bytes is not None and self.block_bytes < 1:
            raise ClusterConfigError(f"block_bytes must be positive, got {self.block_bytes}")
        if self.replication > self.nodes:
            raise ClusterConfigError(
                f"Replication factor {self.replication} needs at least as many nodes, got {self.nodes}"
            )

    @property
    def n_slots(self) -> int:
        return self.nodes * self.slots_per_node

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> ClusterConfig:
        """Loads a YAML or JSON config. Keyword arguments override file values."""
        data = loadfn(path)
        if isinstance(data, ClusterConfig):
            data = data.as_dict()
        if not isinstance(data, Mapping):
            raise ClusterConfigError(f"{path} does not hold a cluster configuration")
        known = {k: v for k, v in data.items() if not k.startswith("@")}
        unknown = set(known).difference(cls.__dataclass_fields__)
        if unknown:
            raise ClusterConfigError(f"Unknown cluster config keys {sorted(unknown)} in {path}")
        known.update(overrides)
        if "nodes" not in known:
            raise ClusterConfigError(f"{path} must set nodes")
        return cls(**known)

    def records_per_block(self, schema: Schema) -> int:
        if self.block_bytes is not None:
            return schema.records_per_block(self.block_bytes)
        return self.block_records


@dataclass
class NodeState:
    """What the cluster knows about one node."""

    node_id: int
    normal_replica_ids: set[int] = field(default_factory=set)
    pseudo_replica_counts: dict[str, int] = field(default_factory=dict)
    busy_slots: int = 0


def _column_chunks(records, schema: Schema) -> dict[str, np.ndarray]:
    if isinstance(records, Mapping):
        records = [records]
    parts: dict[str, list] = {name: [] for name in schema.names}
    for chunk in records:
        missing = set(schema.names).difference(chunk)
        if missing:
            raise ClusterConfigError(f"Records lack attributes {sorted(missing)}")
        for name in schema.names:
            parts[name].append(np.asarray(chunk[name], dtype=schema[name].dtype))
    return {
        name: np.concatenate(cols) if cols else np.empty(0, dtype=schema[name].dtype) for name, cols in parts.items()
    }


class Cluster:
    """
    Nodes, replica registry and per-node Adaptive Indexers of a cluster root.

    Usage::

        cluster = Cluster(ClusterConfig(nodes=4, storage_root=root))
        cluster.upload_dataset(columns, schema, ["a", "b", "c"])
        results = cluster.run_wave(plan, job, offer_policy)
    """

    def __init__(self, config: ClusterConfig, registry: ReplicaRegistry | None = None):
        self.config = config
        self.root = Path(config.storage_root)
        self.registry = registry
        self._indexers: dict[int, AdaptiveIndexer] = {}
        self._slots = {n: threading.BoundedSemaphore(config.slots_per_node) for n in range(config.nodes)}
        self._busy: Counter[int] = Counter()
        self._busy_lock = threading.Lock()

    @classmethod
    def open(cls, root: Union[str, Path]) -> Cluster:
        """Reopens an uploaded cluster root."""
        root = Path(root)
        config = ClusterConfig.from_file(root / CONFIG_NAME, storage_root=str(root))
        return cls(config, ReplicaRegistry.open(root))

    @property
    def schema(self) -> Schema:
        return self._registry().schema

    def _registry(self) -> ReplicaRegistry:
        if self.registry is None:
            raise ClusterConfigError(f"No dataset uploaded to {self.root}")
        return self.registry

    def node_root(self, node_id: int) -> Path:
        return self.root / f"node_{node_id}"

    def save_config(self) -> None:
        makedirs_p(self.root)
        d = self.config.as_dict()
        d.pop("storage_root", None)
        dumpfn(d, self.root / CONFIG_NAME, indent=2)

    @logged(logging.INFO)
    def upload_dataset(
        self,
        records: Mapping[str, Sequence] | Iterable[Mapping[str, Sequence]],
        schema: Schema,
        upload_index_attributes: Sequence[str] = (),
    ) -> ReplicaRegistry:
        """
        Splits a dataset into blocks and stores r normal replicas of each, on
        r distinct nodes (block b, replica k on node (b + k) mod nodes).
        Replica k is sorted and indexed on upload_index_attributes[k] if
        given.

        Args:
            records: Columns {name: values}, or an iterable of such chunks.
            schema: Dataset schema.
            upload_index_attributes: At most r attributes.

        Returns:
            The replica registry of the dataset.
        """
        cfg = self.config
        attrs = list(upload_index_attributes)
        if len(attrs) > cfg.replication:
            raise ClusterConfigError(f"{len(attrs)} upload indexes for a replication factor of {cfg.replication}")
        schema.ordered(attrs)
        makedirs_p(self.root)
        if (self.root / DATASET_NAME).exists():
            raise ClusterConfigError(f"{self.root} already holds a dataset")
        for node_id in range(cfg.nodes):
            makedirs_p(self.node_root(node_id) / "blocks")

        columns = _column_chunks(records, schema)
        n_records = len(next(iter(columns.values())))
        per_block = cfg.records_per_block(schema)
        registry = ReplicaRegistry(schema, cfg.replication, self.root)
        for block_id, start in enumerate(range(0, n_records, per_block)):
            block = DataBlock(block_id, schema, {n: c[start : start + per_block] for n, c in columns.items()})
            registry.add_block(block_id)
            for k in range(cfg.replication):
                node_id = (block_id + k) % cfg.nodes
                attr = attrs[k] if k < len(attrs) else None
                replica = block if attr is None else build_index(block, attr, cfg.page_size_records)[0]
                path = normal_replica_path(block_id, self.node_root(node_id))
                write_block(replica, path)
                registry.register_normal(
                    block_id,
                    BlockReplicaInfo(node_id, ReplicaKind.NORMAL, str(path), attr, frozenset(schema.names)),
                )
        registry.save_metadata()
        self.save_config()
        self.registry = registry
        logger.info(f"Uploaded {n_records} records as {len(registry)} blocks to {cfg.nodes} nodes")
        return registry

    def node_state(self, node_id: int) -> NodeState:
        registry = self._registry()
        if not 0 <= node_id < self.config.nodes:
            raise ClusterConfigError(f"Unknown node {node_id}")
        state = NodeState(node_id)
        for block_id in registry.block_ids:
            if any(r.node_id == node_id for r in registry.normal_replicas(block_id)):
                state.normal_replica_ids.add(block_id)
        for attr in registry.schema.names:
            count = registry.pseudo_count(node_id, attr)
            if count:
                state.pseudo_replica_counts[attr] = count
        with self._busy_lock:
            state.busy_slots = self._busy[node_id]
        return state

    @contextmanager
    def _slot(self, node_id: int) -> Iterator[None]:
        """Holds one map slot of the node; tasks beyond slots_per_node wait."""
        with self._slots[node_id]:
            with self._busy_lock:
                self._busy[node_id] += 1
            try:
                yield
            finally:
                with self._busy_lock:
                    self._busy[node_id] -= 1

    def _run_task(self, assignment: TaskAssignment, job: JobSpec, ctx: TaskContext, task_id: int) -> TaskResult:
        with self._slot(assignment.split.node_id):
            return record_reader_scan(assignment.split, job, ctx, task_id)

    def indexer(self, node_id: int) -> AdaptiveIndexer:
        """The node's Adaptive Indexer, started on first use."""
        if node_id not in self._indexers:
            cfg = self.config
            self._indexers[node_id] = AdaptiveIndexer(
                node_id,
                self.node_root(node_id),
                self._registry(),
                page_size_records=cfg.page_size_records,
                build_queue_capacity=cfg.build_queue_capacity,
                write_queue_capacity=cfg.write_queue_capacity,
            ).start()
        return self._indexers[node_id]

    def drain_indexers(self) -> None:
        """Waits until every Adaptive Indexer has built and written its queue."""
        for indexer in self._indexers.values():
            indexer.join()

    def close(self) -> None:
        for indexer in self._indexers.values():
            indexer.close()
        self._indexers = {}
        if self.registry is not None:
            self.registry.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def task_context(self, offer_policy: OfferPolicy | None = None) -> TaskContext:
        return TaskContext(
            registry=self._registry(),
            cost=self.config.cost,
            projection_mode=self.config.projection_mode,
            offer_policy=offer_policy,
            indexer_for=self.indexer,
        )

    def run_wave(
        self,
        assignments: Sequence[TaskAssignment],
        job: JobSpec,
        offer_policy: OfferPolicy | None = None,
        first_task_id: int = 0,
        first_wave: int = 0,
        progress: bool = False,
    ) -> list[TaskResult]:
        """
        Executes map tasks in waves of at most n_slots concurrent tasks. After
        every wave the Adaptive Indexers are drained, so a wave's indexes are
        registered before the next wave starts.

        Args:
            assignments: Planned tasks, executed in order.
            job: Job bound to the dataset schema.
            offer_policy: Offer policy of the job; None disables offering.
            first_task_id: Task id of the first assignment.
            first_wave: Wave number of the first wave.
            progress: Show a progress bar per wave.

        Returns:
            One TaskResult per assignment, in order, with its wave number.
        """
        n_slots = self.config.n_slots
        ctx = self.task_context(offer_policy)
        results: list[TaskResult] = []
        task_id = first_task_id
        for wave, batch in enumerate(chunks(assignments, n_slots), start=first_wave):
            ids = range(task_id, task_id + len(batch))
            task_id += len(batch)
            out = imap_threads(
                n_slots,
                lambda item: self._run_task(item[0], job, ctx, item[1]),
                list(zip(batch, ids)),
                progress=progress,
                desc=f"{job.job_id} wave {wave}",
            )
            self.drain_indexers()
            results.extend(replace(r, wave=wave) for r in out)
        return results
