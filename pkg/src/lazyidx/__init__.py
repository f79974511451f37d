"""
lazyidx builds clustered indexes on the blocks of a simulated MapReduce-style
cluster as a byproduct of running selective map-only jobs. Blocks are stored in
a columnar (PAX) binary format, every full scan can hand its block to a per-node
Adaptive Indexer, and the resulting pseudo replicas are picked up by later jobs
through index scans. Offer rates, eager (cost-model driven) indexing,
selectivity-based indexing, invisible projection and lazy projection are
supported.
"""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("lazyidx")
except PackageNotFoundError:  # pragma: no cover
    # package is not installed
    pass
