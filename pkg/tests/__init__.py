"""
Unit tests and test files for lazyidx.
"""

from __future__ import annotations
