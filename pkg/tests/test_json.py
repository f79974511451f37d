from __future__ import annotations

import dataclasses
import datetime
import json
from enum import Enum
from pathlib import Path

import numpy as np
import pytest

from lazyidx.json import LazyDecoder, LazyEncoder, MSONable, jsanitize
from lazyidx.registry import BlockReplicaInfo, ReplicaKind


class Kind(Enum):
    NORMAL = "normal"
    PSEUDO = "pseudo"


class GoodReplica(MSONable):
    def __init__(self, node_id, path, kind=Kind.NORMAL, attrs=()):
        self.node_id = node_id
        self._path = path
        self.kind = kind
        self.attrs = attrs


class BadReplica(MSONable):
    def __init__(self, node_id):
        self.node = node_id


@dataclasses.dataclass
class Wave:
    wave: int
    seconds: float


class TestMSONable:
    def test_as_dict(self):
        r = GoodReplica(3, "node_3/blocks/blk_1", Kind.PSEUDO, frozenset({"b", "a"}))
        d = r.as_dict()
        assert d["@module"] == __name__
        assert d["@class"] == "GoodReplica"
        assert d["path"] == "node_3/blocks/blk_1"
        assert d["kind"] == "pseudo"
        assert d["attrs"] == ["a", "b"]

    def test_round_trip(self):
        r = GoodReplica(1, "p")
        back = GoodReplica.from_dict(r.as_dict())
        assert (back.node_id, back._path) == (1, "p")
        assert json.loads(r.to_json())["node_id"] == 1

    def test_missing_attribute(self):
        with pytest.raises(NotImplementedError, match="BadReplica"):
            BadReplica(1).as_dict()

    def test_dataclass_with_enum(self):
        info = BlockReplicaInfo(2, ReplicaKind.PSEUDO, "node_2/pseudo/blk_0/d", "d", frozenset({"d"}))
        s = json.dumps(info, cls=LazyEncoder)
        assert json.loads(s, cls=LazyDecoder) == info


class TestLazyEncoderDecoder:
    def test_numpy_and_paths(self):
        data = {
            "a": np.arange(4, dtype=np.int64),
            "x": np.float64(1.5),
            "p": Path("node_0"),
            "s": {3, 1},
            "k": Kind.NORMAL,
        }
        decoded = json.loads(json.dumps(data, cls=LazyEncoder), cls=LazyDecoder)
        np.testing.assert_array_equal(decoded["a"], np.arange(4))
        assert decoded["a"].dtype == np.int64
        assert decoded["x"] == 1.5
        assert decoded["p"] == "node_0"
        assert decoded["s"] == [1, 3]
        assert decoded["k"] == "normal"

    def test_datetime(self):
        now = datetime.datetime(2024, 5, 1, 12, 30)
        assert json.loads(json.dumps({"t": now}, cls=LazyEncoder), cls=LazyDecoder)["t"] == now

    def test_plain_dataclass(self):
        s = json.dumps(Wave(2, 3.5), cls=LazyEncoder)
        assert json.loads(s, cls=LazyDecoder) == Wave(2, 3.5)

    def test_unknown_module_stays_a_dict(self):
        d = {"@module": "no.such.module", "@class": "Thing", "v": 1}
        assert json.loads(json.dumps(d), cls=LazyDecoder) == d

    def test_unsupported(self):
        with pytest.raises(TypeError):
            json.dumps(object(), cls=LazyEncoder)


def test_jsanitize():
    d = {
        1: np.int64(3),
        "arr": np.array([[1, 2], [3, 4]]),
        "kind": Kind.PSEUDO,
        "key": b"word0001",
        "path": Path("a/b"),
        "wave": Wave(0, 2.0),
        "set": {"b", "a"},
        "none": None,
    }
    clean = jsanitize(d)
    assert clean == {
        "1": 3,
        "arr": [[1, 2], [3, 4]],
        "kind": "pseudo",
        "key": "word0001",
        "path": "a/b",
        "wave": {"wave": 0, "seconds": 2.0},
        "set": ["a", "b"],
        "none": None,
    }
    json.dumps(clean)
    assert jsanitize(Kind.NORMAL, enum_values=False) == "Kind.NORMAL"
    assert jsanitize(object(), strict=False).startswith("<object")
    with pytest.raises(AttributeError):
        jsanitize(object(), strict=True)

