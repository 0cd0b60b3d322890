import os
from typing import Iterable

from jdflow.fs import ensure_path, replace_file, temp_path_for


class BaseFile:
    def __init__(self, file_path: str) -> None:
        file_path = os.path.normpath(file_path)
        base_path = os.path.dirname(file_path)
        if base_path:
            ensure_path(base_path)
        self.file_path = file_path
        self.file_name = os.path.basename(file_path)

    def __repr__(self) -> str:
        cls_name = self.__class__.__name__
        return f'{cls_name}("{self.file_path}")'

    def open(self, mode="rb"):
        raise NotImplementedError


class TextFile(BaseFile):
    # artifacts are byte-comparable across runs, so pin encoding and newlines
    ENCODING = "utf-8"
    NEWLINE = "\n"

    def open(self, mode="r", **kwargs):
        kwargs.setdefault("encoding", self.ENCODING)
        kwargs.setdefault("newline", self.NEWLINE)
        return open(self.file_path, mode, **kwargs)

    def read(self) -> str:
        with self.open("r") as f:
            return f.read()

    def write_atomic(self, content: str) -> None:
        """write to a sibling temp file, then rename over the target"""
        tmp_path = temp_path_for(self.file_path)
        with open(tmp_path, "w", encoding=self.ENCODING, newline=self.NEWLINE) as f:
            f.write(content)

        replace_file(tmp_path, self.file_path)

    def write_lines_atomic(self, lines: Iterable[str]) -> None:
        self.write_atomic("".join(f"{line}\n" for line in lines))
