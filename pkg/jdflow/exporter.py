import csv
import io
import json
import os
import platform
import time
from logging import Logger, getLogger
from typing import Any, ClassVar, Dict, Iterable, List, Optional, Sequence

import psutil

from jdflow import __version__
from jdflow.models.base import to_plain
from jdflow.storage import TextFile

__all__ = ("to_jsonl_line", "to_csv_text", "Exporter")

# versions recorded in the manifest
TRACKED_PACKAGES = ("numpy", "scipy", "pydantic", "attrs", "psutil")


def to_jsonl_line(record: Dict[str, Any]) -> str:
    return json.dumps(to_plain(record), sort_keys=True, ensure_ascii=False)


def _cell(value: Any) -> str:
    value = to_plain(value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def to_csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _package_version(name: str) -> Optional[str]:
    try:
        module = __import__(name)
    except ImportError:
        return None
    return getattr(module, "__version__", None)


class Exporter:
    """Writes the artifacts of one run into `out_dir`, every file by
    write-then-rename.

    `manifest.json` only holds deterministic fields; timestamps and machine
    details go to `run_info.json`.
    """

    MANIFEST_FILE: ClassVar[str] = "manifest.json"
    RUN_INFO_FILE: ClassVar[str] = "run_info.json"
    _logger: ClassVar[Logger] = getLogger("Exporter")

    def __init__(self, out_dir: str) -> None:
        self.out_dir = out_dir
        self.started = time.time()
        self.artifacts: List[str] = []

    def file(self, name: str) -> TextFile:
        return TextFile(os.path.join(self.out_dir, name))

    def register(self, name: str) -> None:
        if name not in self.artifacts:
            self.artifacts.append(name)

    def write_jsonl(self, name: str, records: Iterable[Dict[str, Any]]) -> int:
        lines = [to_jsonl_line(r) for r in records]
        self.file(name).write_lines_atomic(lines)
        self.register(name)
        self._logger.info(f"wrote {len(lines)} records to {name}")
        return len(lines)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        self.file(name).write_atomic(to_csv_text(header, rows))
        self.register(name)
        self._logger.info(f"wrote {name}")

    def write_text(self, name: str, text: str) -> None:
        self.file(name).write_atomic(text)
        self.register(name)

    @classmethod
    def versions(cls) -> Dict[str, Optional[str]]:
        versions = {"jdflow": __version__, "python": platform.python_version()}
        versions.update({name: _package_version(name) for name in TRACKED_PACKAGES})
        return versions

    def write_manifest(self, subcommand: str, config_hash: str, seed: int, passed: bool) -> None:
        manifest = {
            "subcommand": subcommand,
            "config_hash": config_hash,
            "seed": seed,
            "pass": passed,
            "artifacts": sorted(self.artifacts),
            "versions": self.versions(),
        }
        self.file(self.MANIFEST_FILE).write_atomic(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    def write_run_info(self, threads: int) -> None:
        ended = time.time()
        info = {
            "start_ts": self.started,
            "end_ts": ended,
            "duration": ended - self.started,
            "threads": threads,
            "system": {
                "platform": platform.platform(),
                "python_version": platform.python_version(),
                "cpu_count": psutil.cpu_count(),
                "memory_total": psutil.virtual_memory().total,
                "memory_percent": psutil.virtual_memory().percent,
            },
        }
        self.file(self.RUN_INFO_FILE).write_atomic(json.dumps(info, sort_keys=True, indent=2) + "\n")
