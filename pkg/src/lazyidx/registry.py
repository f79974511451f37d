"""
The NameNode-like replica registry: for every block of the dataset, the list
of its replicas (normal, pseudo and partial pseudo), where they live and which
attribute they are clustered on.

Every change is appended to a line-delimited JSON journal, so a cluster root
can be reopened and replayed by a later process.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from lazyidx.block_store import Schema
from lazyidx.json import LazyEncoder, MSONable, jsanitize
from lazyidx.serialization import dumpfn, loadfn

if TYPE_CHECKING:
    from typing import Iterable, Union

logger = logging.getLogger(__name__)

JOURNAL_NAME = "registry.jsonl"
DATASET_NAME = "dataset.json"


class RegistryError(KeyError):
    """Raised for unknown blocks and inconsistent registrations."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ReplicaKind(Enum):
    NORMAL = "normal"
    PSEUDO = "pseudo"
    PARTIAL_PSEUDO = "partial_pseudo"


# Lower is preferred when several replicas are clustered on the same attribute.
_PREFERENCE = {ReplicaKind.NORMAL: 0, ReplicaKind.PSEUDO: 1, ReplicaKind.PARTIAL_PSEUDO: 2}


@dataclass(frozen=True)
class BlockReplicaInfo(MSONable):
    """
    One replica of a block as the registry sees it.

    Args:
        node_id: Node holding the replica file.
        kind: normal, pseudo or partial_pseudo.
        path: Replica file.
        indexed_attribute: Attribute the replica is sorted and indexed on.
        available_attributes: Attributes stored in the replica.
        has_permutation_vector: Whether the file carries a permutation vector.
    """

    node_id: int
    kind: ReplicaKind
    path: str
    indexed_attribute: str | None = None
    available_attributes: frozenset[str] = frozenset()
    has_permutation_vector: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ReplicaKind(self.kind))
        object.__setattr__(self, "available_attributes", frozenset(self.available_attributes))
        object.__setattr__(self, "path", str(self.path))

    def validate(self, schema: Schema) -> None:
        """Checks the per-kind invariants against the dataset schema."""
        full = frozenset(schema.names)
        if not self.available_attributes <= full:
            raise RegistryError(f"Unknown attributes {sorted(self.available_attributes - full)}")
        if self.indexed_attribute is not None and self.indexed_attribute not in full:
            raise RegistryError(f"Unknown indexed attribute {self.indexed_attribute!r}")
        if self.kind is ReplicaKind.NORMAL:
            if self.available_attributes != full or self.has_permutation_vector:
                raise RegistryError("A normal replica holds the full schema and no permutation vector")
        elif self.kind is ReplicaKind.PSEUDO:
            if self.indexed_attribute is None or self.available_attributes != full:
                raise RegistryError("A pseudo replica needs an indexed attribute and the full schema")
        elif self.indexed_attribute is None or self.indexed_attribute not in self.available_attributes:
            raise RegistryError("A partial pseudo replica must store its indexed attribute")
        elif not self.has_permutation_vector:
            raise RegistryError("A partial pseudo replica carries a permutation vector")

    @property
    def is_index(self) -> bool:
        return self.indexed_attribute is not None


class ReplicaRegistry:
    """
    Thread-safe mapping {block_id -> list of BlockReplicaInfo} plus the
    dataset metadata (schema, replication factor, block list). All public
    methods take the registry lock, so concurrent register and lookup calls
    are linearizable.
    """

    def __init__(self, schema: Schema, replication: int, root: Union[str, Path, None] = None):
        """
        Args:
            schema: Dataset schema.
            replication: Replication factor r of normal replicas.
            root: Cluster root. If given, every change is journaled there.
        """
        self.schema = schema
        self.replication = replication
        self.root = Path(root) if root is not None else None
        self._lock = threading.RLock()
        self._replicas: dict[int, list[BlockReplicaInfo]] = {}
        self._journal = None
        if self.root is not None:
            self._journal = open(self.root / JOURNAL_NAME, "a", encoding="utf-8")

    # Journal

    def _log_event(self, event: str, block_id: int, info: BlockReplicaInfo | None = None) -> None:
        if self._journal is None:
            return
        record = {"event": event, "block_id": block_id}
        if info is not None:
            record["replica"] = jsanitize(info.as_dict())
        self._journal.write(json.dumps(record, cls=LazyEncoder) + "\n")
        self._journal.flush()

    def save_metadata(self) -> None:
        """Writes dataset.json (schema, replication factor, block ids)."""
        if self.root is None:
            raise RegistryError("Registry has no root to save to")
        with self._lock:
            dumpfn(
                {"schema": jsanitize(self.schema.as_dict()), "replication": self.replication, "blocks": self.block_ids},
                self.root / DATASET_NAME,
                indent=2,
            )

    @classmethod
    def open(cls, root: Union[str, Path]) -> ReplicaRegistry:
        """
        Reopens the registry of a cluster root by reading dataset.json and
        replaying the journal.
        """
        root = Path(root)
        meta = loadfn(root / DATASET_NAME)
        schema = meta["schema"] if isinstance(meta["schema"], Schema) else Schema.from_dict(meta["schema"])
        registry = cls(schema, int(meta["replication"]))
        journal = root / JOURNAL_NAME
        replayed = 0
        if journal.exists():
            with open(journal, encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    block_id = int(record["block_id"])
                    if record["event"] == "block":
                        registry.add_block(block_id)
                    else:
                        info = BlockReplicaInfo.from_dict(record["replica"])
                        if record["event"] == "update":
                            registry.update_replica(block_id, info)
                        elif info.kind is ReplicaKind.NORMAL:
                            registry.register_normal(block_id, info)
                        else:
                            registry.register_index(block_id, info)
                    replayed += 1
        for block_id in meta.get("blocks", []):
            registry.add_block(int(block_id))
        registry.root = root
        registry._journal = open(journal, "a", encoding="utf-8")
        logger.info(f"Replayed {replayed} registry events from {journal}")
        return registry

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    # Mutations

    def add_block(self, block_id: int) -> None:
        with self._lock:
            if block_id not in self._replicas:
                self._replicas[block_id] = []
                self._log_event("block", block_id)

    def register_normal(self, block_id: int, info: BlockReplicaInfo) -> None:
        """Adds a normal replica (upload time). At most r per block."""
        if info.kind is not ReplicaKind.NORMAL:
            raise RegistryError(f"Expected a normal replica, got {info.kind.value}")
        info.validate(self.schema)
        with self._lock:
            replicas = self._get(block_id)
            if info in replicas:
                return
            if sum(r.kind is ReplicaKind.NORMAL for r in replicas) >= self.replication:
                raise RegistryError(f"Block {block_id} already has {self.replication} normal replicas")
            if any(r.kind is ReplicaKind.NORMAL and r.node_id == info.node_id for r in replicas):
                raise RegistryError(f"Block {block_id} already has a normal replica on node {info.node_id}")
            replicas.append(info)
            self._log_event("register", block_id, info)

    def register_index(self, block_id: int, info: BlockReplicaInfo) -> bool:
        """
        Registers a pseudo or partial pseudo replica. A second registration
        for the same (block, indexed attribute) is a no-op.

        Returns:
            True if the registry changed.
        """
        if info.kind is ReplicaKind.NORMAL:
            raise RegistryError("Use register_normal for normal replicas")
        info.validate(self.schema)
        with self._lock:
            replicas = self._get(block_id)
            pseudo = [r for r in replicas if r.kind is not ReplicaKind.NORMAL]
            if any(r.indexed_attribute == info.indexed_attribute for r in pseudo):
                return False
            replicas.append(info)
            self._log_event("register", block_id, info)
        logger.debug(
            f"Registered {info.kind.value}({info.indexed_attribute}) for block {block_id} on node {info.node_id}"
        )
        return True

    def update_replica(self, block_id: int, info: BlockReplicaInfo) -> None:
        """
        Replaces the pseudo or partial pseudo replica of block_id on
        info.indexed_attribute, e.g. when a partial replica becomes complete.
        """
        info.validate(self.schema)
        with self._lock:
            replicas = self._get(block_id)
            for i, r in enumerate(replicas):
                if r.kind is not ReplicaKind.NORMAL and r.indexed_attribute == info.indexed_attribute:
                    replicas[i] = info
                    self._log_event("update", block_id, info)
                    return
        raise RegistryError(f"No index replica of block {block_id} on {info.indexed_attribute!r} to update")

    # Queries

    def _get(self, block_id: int) -> list[BlockReplicaInfo]:
        try:
            return self._replicas[block_id]
        except KeyError:
            raise RegistryError(f"Unknown block {block_id}") from None

    @property
    def block_ids(self) -> list[int]:
        with self._lock:
            return sorted(self._replicas)

    def __len__(self) -> int:
        with self._lock:
            return len(self._replicas)

    def __contains__(self, block_id: object) -> bool:
        with self._lock:
            return block_id in self._replicas

    def lookup(self, block_id: int) -> list[BlockReplicaInfo]:
        """All replicas of a block."""
        with self._lock:
            return list(self._get(block_id))

    def normal_replicas(self, block_id: int) -> list[BlockReplicaInfo]:
        with self._lock:
            return [r for r in self._get(block_id) if r.kind is ReplicaKind.NORMAL]

    def find_index(self, block_id: int, attribute: str) -> BlockReplicaInfo | None:
        """
        A replica of block_id clustered on attribute, preferring normal over
        pseudo over partial pseudo (then the lowest node id), or None.
        """
        with self._lock:
            candidates = [r for r in self._replicas.get(block_id, ()) if r.indexed_attribute == attribute]
        if not candidates:
            return None
        return min(candidates, key=lambda r: (_PREFERENCE[r.kind], r.node_id))

    def pseudo_count(self, node_id: int, attribute: str | None = None) -> int:
        """
        Number of pseudo and partial pseudo replicas on a node, for one
        attribute or (attribute=None) over all attributes.
        """
        with self._lock:
            return sum(
                1
                for replicas in self._replicas.values()
                for r in replicas
                if r.node_id == node_id
                and r.kind is not ReplicaKind.NORMAL
                and (attribute is None or r.indexed_attribute == attribute)
            )

    def indexed_block_count(self, attribute: str, block_ids: Iterable[int] | None = None) -> int:
        """Number of blocks having any replica clustered on attribute."""
        with self._lock:
            ids = self._replicas if block_ids is None else block_ids
            return sum(1 for b in ids if self.find_index(b, attribute) is not None)

    def check(self) -> None:
        """Checks the registry-wide invariants."""
        with self._lock:
            for block_id, replicas in self._replicas.items():
                normals = [r for r in replicas if r.kind is ReplicaKind.NORMAL]
                if not 1 <= len(normals) <= self.replication:
                    raise RegistryError(f"Block {block_id} has {len(normals)} normal replicas")
                keys = [r.indexed_attribute for r in replicas if r.kind is not ReplicaKind.NORMAL]
                if len(keys) != len(set(keys)):
                    raise RegistryError(f"Block {block_id} has duplicate pseudo replicas")
