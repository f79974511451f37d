"""
IO helpers: transparent support for compressed dataset files and a byte
counting reader used for the I/O accounting of block scans.
"""

from __future__ import annotations

import bz2
import gzip
import lzma
import os
import threading
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import IO, Any, BinaryIO, Union


def zopen(
    filename: Union[str, Path],
    /,
    mode: str,
    **kwargs: Any,
) -> IO | bz2.BZ2File | gzip.GzipFile | lzma.LZMAFile:
    """
    This function wraps around `[bz2/gzip/lzma].open` and `open`
    to deal intelligently with compressed or uncompressed files.
    Supports context manager:
        `with zopen(filename, mode="rt", ...)`

    Notes:
        - Always explicitly specify binary/text in `mode`, i.e.
            always pass `t` or `b` in `mode`.
        - Text mode defaults to UTF-8 when no `encoding` is given.

    Args:
        filename (str | Path): The file to open.
        mode (str): The mode in which the file is opened, you should
            explicitly specify "b" for binary or "t" for text.
        **kwargs: Additional keyword arguments to pass to `open`.

    Returns:
        TextIO | BinaryIO | bz2.BZ2File | gzip.GzipFile | lzma.LZMAFile
    """
    if not ("b" in mode or "t" in mode):
        raise ValueError(f"mode must contain 't' or 'b', got {mode!r}")

    if "t" in mode and kwargs.get("encoding", None) is None:
        kwargs["encoding"] = "utf-8"

    _name, ext = os.path.splitext(filename)

    ext = ext.lower()

    if ext == ".bz2":
        return bz2.open(filename, mode, **kwargs)
    if ext == ".gz":
        return gzip.open(filename, mode, **kwargs)
    if ext in {".xz", ".lzma"}:
        return lzma.open(filename, mode, **kwargs)

    return open(filename, mode, **kwargs)


class ByteCounter:
    """
    Thread-safe accumulator of bytes read from storage. A task owns one
    counter and passes it to every file it opens so the bytes it touched can
    be reported per task.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.total = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.total += n

    def __int__(self) -> int:
        return self.total

    def __repr__(self) -> str:
        return f"ByteCounter(total={self.total})"


class CountingReader:
    """
    Wraps a binary file and counts every byte handed out by read(). Seeking
    is free, which is how a columnar reader skips unprojected attributes.

    Usage::

        counter = ByteCounter()
        with CountingReader(open(path, "rb"), counter) as f:
            f.seek(offset)
            data = f.read(length)
        assert counter.total == len(data)
    """

    def __init__(self, fileobj: BinaryIO, counter: ByteCounter | None = None) -> None:
        """
        Args:
            fileobj: Binary file object opened for reading.
            counter: Shared counter. A private one is created if None.
        """
        self._f = fileobj
        self.counter = counter if counter is not None else ByteCounter()
        self.bytes_read = 0

    def read(self, n: int = -1) -> bytes:
        data = self._f.read(n)
        self.bytes_read += len(data)
        self.counter.add(len(data))
        return data

    def read_exactly(self, n: int) -> bytes:
        """Read n bytes or raise EOFError on a truncated file."""
        data = self.read(n)
        if len(data) != n:
            raise EOFError(f"expected {n} bytes, got {len(data)}")
        return data

    def seek(self, offset: int, whence: int = os.SEEK_SET) -> int:
        return self._f.seek(offset, whence)

    def tell(self) -> int:
        return self._f.tell()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
