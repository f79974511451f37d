"""
JSON serialization and deserialization utilities for the metadata that
lazyidx persists next to the block files: cluster configuration, replica
registry journal entries, calibration values and run reports.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
from enum import Enum
from importlib import import_module
from inspect import getfullargspec
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from typing import Any


class MSONable:
    """
    Mix-in specifying an API for objects that round-trip through JSON.
    MSONable objects implement an as_dict method returning a json
    serializable dict, and a from_dict class method regenerating the object
    from that dict. The dict carries "@module" and "@class" keys so that
    LazyDecoder can rebuild the right class::

        d["@module"] = self.__class__.__module__
        d["@class"] = self.__class__.__name__

    The default implementation looks up self.argname or self._argname for
    every constructor argument, which covers dataclasses and plain classes
    that store their arguments::

        class ReplicaThing(MSONable):

            def __init__(self, node_id, path, kind="normal"):
                self.node_id = node_id
                self._path = path
                self.kind = kind
    """

    def as_dict(self) -> dict:
        """
        A JSON serializable dict representation of an object.
        """
        d: dict[str, Any] = {
            "@module": self.__class__.__module__,
            "@class": self.__class__.__name__,
        }

        try:
            parent_module = self.__class__.__module__.split(".", maxsplit=1)[0]
            module_version = import_module(parent_module).__version__
            d["@version"] = str(module_version)
        except (AttributeError, ImportError):
            d["@version"] = None

        spec = getfullargspec(self.__class__.__init__)

        for c in spec.args + spec.kwonlyargs:
            if c != "self":
                try:
                    a = getattr(self, c)
                except AttributeError:
                    try:
                        a = getattr(self, "_" + c)
                    except AttributeError:
                        raise NotImplementedError(
                            f"Unable to automatically determine as_dict format for {self.__class__.__name__}. "
                            "MSONable requires all args to be present as either self.argname or "
                            "self._argname. Alternatively, implement both as_dict and from_dict."
                        )
                d[c] = _recursive_as_dict(a)
        return d

    @classmethod
    def from_dict(cls, d: dict):
        """
        Args:
            d: Dict representation.

        Returns:
            MSONable class.
        """
        decoded = {k: LazyDecoder().process_decoded(v) for k, v in d.items() if not k.startswith("@")}
        return cls(**decoded)

    def to_json(self) -> str:
        """
        Returns a json string representation of the MSONable object.
        """
        return json.dumps(self, cls=LazyEncoder)


def _recursive_as_dict(obj):
    if isinstance(obj, (list, tuple)):
        return [_recursive_as_dict(it) for it in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_recursive_as_dict(it) for it in obj)
    if isinstance(obj, dict):
        return {kk: _recursive_as_dict(vv) for kk, vv in obj.items()}
    if hasattr(obj, "as_dict"):
        return obj.as_dict()
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class LazyEncoder(json.JSONEncoder):
    """
    A Json Encoder which supports the MSONable API, plus adds support for
    NumPy arrays and scalars, enums, paths and datetime objects.
    Usage::
        # Add it as a *cls* keyword when using json.dump
        json.dumps(object, cls=LazyEncoder)
    """

    def default(self, o) -> Any:
        """
        Overriding default method for JSON encoding.

        Args:
            o: Python object.

        Return:
            Python dict representation.
        """
        if isinstance(o, datetime.datetime):
            return {"@module": "datetime", "@class": "datetime", "string": str(o)}
        if isinstance(o, Path):
            return str(o)
        if isinstance(o, np.ndarray):
            return {
                "@module": "numpy",
                "@class": "array",
                "dtype": str(o.dtype),
                "data": o.tolist(),
            }
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, (set, frozenset)):
            return sorted(o)
        if hasattr(o, "as_dict"):
            return o.as_dict()
        if dataclasses.is_dataclass(o) and not isinstance(o, type):
            d = dataclasses.asdict(o)
            d.update({"@module": o.__class__.__module__, "@class": o.__class__.__name__})
            return d
        return json.JSONEncoder.default(self, o)


class LazyDecoder(json.JSONDecoder):
    """
    A Json Decoder which supports the MSONable API. Dicts carrying "@module"
    and "@class" are turned back into objects; anything else is returned as
    decoded. Nested lists and dicts are processed recursively.

    Usage:

        # Add it as a *cls* keyword when using json.load
        json.loads(json_string, cls=LazyDecoder)
    """

    def process_decoded(self, d):
        """
        Recursive method to support decoding dicts and lists containing
        MSONable objects.
        """
        if isinstance(d, dict):
            modname = d.get("@module")
            classname = d.get("@class")
            if modname == "datetime" and classname == "datetime":
                return datetime.datetime.fromisoformat(d["string"])
            if modname == "numpy" and classname == "array":
                return np.array(d["data"], dtype=d["dtype"])
            if modname and classname:
                try:
                    mod = import_module(modname)
                except ImportError:
                    mod = None
                if mod is not None and hasattr(mod, classname):
                    cls_ = getattr(mod, classname)
                    data = {k: v for k, v in d.items() if not k.startswith("@")}
                    if hasattr(cls_, "from_dict"):
                        return cls_.from_dict(data)
                    if dataclasses.is_dataclass(cls_):
                        return cls_(**{k: self.process_decoded(v) for k, v in data.items()})
            return {k: self.process_decoded(v) for k, v in d.items()}

        if isinstance(d, list):
            return [self.process_decoded(x) for x in d]

        return d

    def decode(self, s):
        """
        Overrides decode from JSONDecoder.

        :param s: string
        :return: Object.
        """
        d = json.loads(s)
        return self.process_decoded(d)


def jsanitize(obj, strict: bool = False, enum_values: bool = True) -> Any:
    """
    This method cleans an input json-like object, either a list or a dict or
    some sequence, nested or otherwise, by converting all non-string
    dictionary keys (such as int and float) to strings, numpy scalars and
    arrays to plain Python values, and paths to strings. Used for the run
    reports, which must stay readable without this package.

    Args:
        obj: input json-like object.
        strict (bool): This parameter sets the behavior when jsanitize
            encounters an object it does not understand. If strict is True,
            jsanitize will try to get the as_dict() attribute of the object. If
            no such attribute is found, an attribute error will be thrown. If
            strict is False, jsanitize will simply call str(object) to convert
            the object to a string representation.
        enum_values (bool): Convert Enums to their values.

    Returns:
        Sanitized dict that can be json serialized.
    """
    if isinstance(obj, Enum) and enum_values:
        return obj.value
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [jsanitize(i, strict=strict, enum_values=enum_values) for i in obj]
        return sorted(items, key=str) if isinstance(obj, (set, frozenset)) else items
    if isinstance(obj, np.ndarray):
        return [jsanitize(i, strict=strict, enum_values=enum_values) for i in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, bytes):
        return obj.decode("utf-8", errors="replace")
    if isinstance(obj, dict):
        return {str(k): jsanitize(v, strict=strict, enum_values=enum_values) for k, v in obj.items()}
    if isinstance(obj, (int, float)) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsanitize(dataclasses.asdict(obj), strict=strict, enum_values=enum_values)
    if not strict:
        return str(obj)
    return jsanitize(obj.as_dict(), strict=strict, enum_values=enum_values)
