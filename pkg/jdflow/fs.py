import os
from typing import Iterator


def ensure_path(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def temp_path_for(path: str) -> str:
    """sibling that write-then-rename goes through"""
    return f"{path}.tmp"


def iter_files(path: str) -> Iterator[str]:
    # plain files directly under `path`; none if it does not exist
    if not os.path.isdir(path):
        return

    for entry in os.scandir(path):
        if entry.is_file():
            yield entry.path


def remove_path(path: str, parent: bool = False) -> int:
    """Delete the files under `path`, and `path` itself with `parent`.
    Returns the number of files removed.
    """
    removed = 0
    for file_path in list(iter_files(path)):
        os.remove(file_path)
        removed += 1

    if parent and os.path.isdir(path):
        os.rmdir(path)

    return removed


def replace_file(src: str, dst: str) -> None:
    # atomic on POSIX and on Windows when both live on the same volume
    os.replace(src, dst)
