"""
Lazy projection: index only the attributes a job reads, and complete the
index replica attribute by attribute as later jobs ask for more.

A partial pseudo replica holds the sorted index attribute, the projected
attributes reordered to match, the sparse index and the permutation vector
of the sort. A job needing an attribute the replica lacks reads it from the
normal replica, reorders it with the permutation vector, and asks the
node's Index Writer to append it. Once every attribute is present the
permutation vector is dropped and the replica becomes a plain pseudo replica.
"""

from __future__ import annotations

import logging
import os
import uuid
from pathlib import Path
from typing import TYPE_CHECKING

from lazyidx.block_store import DEFAULT_PAGE_SIZE, BlockFile, DataBlock, pseudo_temp_path, read_block, write_block
from lazyidx.indexer import PermutationVector, build_index
from lazyidx.os import remove_quietly
from lazyidx.registry import BlockReplicaInfo, ReplicaKind

if TYPE_CHECKING:
    from typing import Iterable, Mapping, Union

    import numpy as np

    from lazyidx.io import ByteCounter
    from lazyidx.registry import ReplicaRegistry

logger = logging.getLogger(__name__)


def build_partial(block: DataBlock, attribute: str, page_size_records: int = DEFAULT_PAGE_SIZE) -> DataBlock:
    """
    Sorts and indexes a block holding a subset of the schema. The result
    carries the permutation vector unless the block is complete, in which
    case it is an ordinary pseudo replica.
    """
    sorted_block, perm, _ = build_index(block, attribute, page_size_records)
    if not block.is_complete:
        sorted_block.permutation = perm.perm
    return sorted_block


def read_missing(
    path: Union[str, Path], names: Iterable[str], counter: ByteCounter | None = None
) -> dict[str, np.ndarray]:
    """Reads attributes from a normal replica, in its record order."""
    with BlockFile(path, counter) as bf:
        return bf.read_columns(names)


def reorder_missing(perm: PermutationVector, columns: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Aligns normal-replica columns with a partial replica's sort order."""
    return {name: perm.apply(col) for name, col in columns.items()}


def complete_partial(
    block_id: int,
    attribute: str,
    path: Union[str, Path],
    aligned: Mapping[str, np.ndarray],
    registry: ReplicaRegistry,
    node_id: int,
    nonce: str | None = None,
) -> bool:
    """
    Appends aligned attributes to the partial pseudo replica at path. The
    file is rewritten to a temporary name and moved over the old one. When
    the replica becomes complete its permutation vector is dropped and its
    registry entry turns into a pseudo replica.

    Args:
        block_id: Block of the replica.
        attribute: Index attribute of the replica.
        path: Replica file.
        aligned: New columns, already in the replica's order.
        registry: Registry to update.
        node_id: Node holding the replica.
        nonce: Temp file suffix.

    Returns:
        True if the replica changed. Attributes already present are ignored.
    """
    path = Path(path)
    current = read_block(path, with_permutation=True)
    new = {name: col for name, col in aligned.items() if name not in current.columns}
    if not new:
        return False
    columns = {**current.columns, **new}
    updated = DataBlock(
        block_id,
        current.schema,
        columns,
        record_count=current.record_count,
        sort_attribute=current.sort_attribute,
        index=current.index,
    )
    complete = updated.is_complete
    if not complete:
        updated.permutation = current.permutation

    node_root = path.parent.parent.parent
    tmp = pseudo_temp_path(block_id, attribute, nonce or uuid.uuid4().hex, node_root)
    try:
        write_block(updated, tmp)
        os.replace(tmp, path)
    except OSError as exc:
        remove_quietly(tmp)
        logger.warning(f"Could not complete the replica of block {block_id} on {attribute!r}: {exc}")
        return False

    registry.update_replica(
        block_id,
        BlockReplicaInfo(
            node_id=node_id,
            kind=ReplicaKind.PSEUDO if complete else ReplicaKind.PARTIAL_PSEUDO,
            path=str(path),
            indexed_attribute=attribute,
            available_attributes=frozenset(updated.columns),
            has_permutation_vector=not complete,
        ),
    )
    logger.debug(f"Appended {sorted(new)} to block {block_id} on {attribute!r}{' (complete)' if complete else ''}")
    return True
