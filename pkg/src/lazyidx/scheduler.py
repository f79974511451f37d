"""
Job planning. Blocks with an index on the predicate attribute are grouped
per hosting node into multi-block index-scan splits. Every other block
becomes a single-block full-scan split, placed on the replica node holding
the fewest indexes for the predicate attribute, so that new pseudo replicas
spread evenly over the cluster.
"""

from __future__ import annotations

import logging
import sys
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from lazyidx.execution import BlockRef, InputSplit, ScanKind
from lazyidx.itertools import chunks

if TYPE_CHECKING:
    from typing import Iterable, TextIO

    from lazyidx.execution import JobSpec
    from lazyidx.registry import ReplicaRegistry

logger = logging.getLogger(__name__)


class PlanningError(RuntimeError):
    """Raised when a block cannot be assigned to any node."""


class ScheduleCountMode(Enum):
    PER_ATTRIBUTE = "per_attribute"
    TOTAL = "total"


@dataclass(frozen=True)
class TaskAssignment:
    """
    One map task of a plan. For full scans, candidates records the
    (node_id, index count) of every replica node at the moment the block
    was assigned, so a plan can be replayed and checked.
    """

    split: InputSplit
    candidates: tuple[tuple[int, int], ...] = ()

    @property
    def node_id(self) -> int:
        return self.split.node_id

    @property
    def scan_kind(self) -> ScanKind:
        return self.split.scan_kind

    @property
    def block_ids(self) -> tuple[int, ...]:
        return self.split.block_ids


def plan_job(
    job: JobSpec,
    registry: ReplicaRegistry,
    max_blocks_per_split: int = 16,
    count_mode: ScheduleCountMode | str = ScheduleCountMode.PER_ATTRIBUTE,
    block_ids: Iterable[int] | None = None,
) -> list[TaskAssignment]:
    """
    Plans the map tasks of a job: index-scan assignments first (by node),
    then full-scan assignments in ascending block id.

    Args:
        job: The job; only the predicate attribute matters here.
        registry: Replica registry of the dataset.
        max_blocks_per_split: Cap on blocks per index-scan split.
        count_mode: Balance on the predicate attribute's index count per
            node, or on the node's total pseudo replica count.
        block_ids: Input blocks. Defaults to the whole dataset.

    Returns:
        List of TaskAssignment.
    """
    if max_blocks_per_split < 1:
        raise ValueError(f"max_blocks_per_split must be positive, got {max_blocks_per_split}")
    count_mode = ScheduleCountMode(count_mode)
    attribute = job.predicate.attribute
    ids = sorted(registry.block_ids if block_ids is None else block_ids)

    indexed: dict[int, list[BlockRef]] = defaultdict(list)
    unindexed = []
    for block_id in ids:
        replica = registry.find_index(block_id, attribute)
        if replica is None:
            unindexed.append(block_id)
        else:
            indexed[replica.node_id].append(BlockRef(block_id, replica))

    plan = []
    for node_id in sorted(indexed):
        for refs in chunks(indexed[node_id], max_blocks_per_split):
            plan.append(TaskAssignment(InputSplit(node_id, refs, ScanKind.INDEX_SCAN)))

    base: dict[int, int] = {}
    assigned: dict[int, int] = defaultdict(int)
    for block_id in unindexed:
        normals = registry.normal_replicas(block_id)
        if not normals:
            raise PlanningError(f"Block {block_id} has no normal replica to scan")
        candidates = []
        for replica in sorted(normals, key=lambda r: r.node_id):
            n = replica.node_id
            if n not in base:
                base[n] = registry.pseudo_count(n, attribute if count_mode is ScheduleCountMode.PER_ATTRIBUTE else None)
            candidates.append((n, base[n] + assigned[n]))
        node_id, _ = min(candidates, key=lambda c: (c[1], c[0]))
        assigned[node_id] += 1
        replica = next(r for r in normals if r.node_id == node_id)
        plan.append(
            TaskAssignment(InputSplit(node_id, (BlockRef(block_id, replica),), ScanKind.FULL_SCAN), tuple(candidates))
        )

    logger.info(
        f"Planned job {job.job_id}: {len(plan) - len(unindexed)} index-scan splits over "
        f"{len(ids) - len(unindexed)} blocks, {len(unindexed)} full-scan splits"
    )
    return plan


def dump_plan(plan: Iterable[TaskAssignment], out: TextIO = sys.stdout) -> None:
    """Writes one "block=<id> node=<k> kind=<index|full>" line per planned block."""
    for assignment in plan:
        for block_id in assignment.block_ids:
            out.write(f"block={block_id} node={assignment.node_id} kind={assignment.scan_kind.value}\n")
