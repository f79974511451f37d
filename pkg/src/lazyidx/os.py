"""
Os functions, e.g., makedirs_p and the write-once publishing of files.
"""

from __future__ import annotations

import errno
import os
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from pathlib import Path
    from typing import Union


def makedirs_p(path: Union[str, Path], **kwargs) -> None:
    """
    Wrapper for os.makedirs that does not raise an exception if the directory
    already exists, in the fashion of "mkdir -p" command. The check is
    performed in a thread-safe way

    Args:
        path: path of the directory to create
        kwargs: standard kwargs for os.makedirs
    """

    try:
        os.makedirs(path, **kwargs)
    except OSError as exc:
        if exc.errno == errno.EEXIST and os.path.isdir(path):
            pass
        else:
            raise


def publish_once(tmp_path: Union[str, Path], final_path: Union[str, Path]) -> bool:
    """
    Atomically moves a finished temporary file to its final name unless the
    final name already exists. Of any number of concurrent callers publishing
    to the same final path, exactly one gets True. The temporary file is
    removed in every case.

    os.rename silently replaces an existing target on POSIX, so the publish
    step is a hard link (which fails on an existing target) followed by the
    removal of the temporary name.

    Args:
        tmp_path: Fully written temporary file.
        final_path: Target path.

    Returns:
        True if this call created final_path.
    """
    try:
        os.link(tmp_path, final_path)
        won = True
    except FileExistsError:
        won = False
    finally:
        remove_quietly(tmp_path)
    return won


def remove_quietly(path: Union[str, Path]) -> None:
    """Removes a file, ignoring a missing one."""
    try:
        os.remove(path)
    except FileNotFoundError:
        pass
