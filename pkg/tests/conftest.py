from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from lazyidx.block_store import Schema
from lazyidx.cluster import Cluster, ClusterConfig

if TYPE_CHECKING:
    from pathlib import Path

SCHEMA = Schema.parse("a:int64|b:int64|c:float64|d:int64|e:str8|f:int64")


def make_columns(rows: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        "a": rng.integers(0, 10, size=rows),
        "b": rng.integers(0, 1000, size=rows),
        "c": rng.uniform(0, 1, size=rows),
        "d": rng.integers(0, 100_000, size=rows),
        "e": np.array([f"s{i % 97}".encode() for i in range(rows)], dtype="S8"),
        "f": np.arange(rows, dtype=np.int64),
    }


def brute_force(columns, attribute, low, high, projection) -> list[tuple]:
    """Oracle: the sorted records a selection plus projection emits."""
    mask = (columns[attribute] >= low) & (columns[attribute] <= high)
    if not projection:
        return [()] * int(mask.sum())
    return sorted(zip(*(columns[name][mask].tolist() for name in projection)))


@pytest.fixture
def schema() -> Schema:
    return SCHEMA


@pytest.fixture
def make_cluster(tmp_path: Path):
    """Factory uploading a dataset to a fresh cluster root; clusters are closed on teardown."""
    clusters = []

    def _make(
        columns=None,
        schema: Schema = SCHEMA,
        upload_index_attributes=(),
        name: str = "cluster",
        **config,
    ) -> Cluster:
        if columns is None:
            columns = make_columns(4000)
        config.setdefault("nodes", 4)
        config.setdefault("replication", 3)
        config.setdefault("block_records", 400)
        config.setdefault("page_size_records", 64)
        cluster = Cluster(ClusterConfig(storage_root=str(tmp_path / name), **config))
        cluster.upload_dataset(columns, schema, upload_index_attributes)
        clusters.append(cluster)
        return cluster

    yield _make
    for cluster in clusters:
        cluster.close()
