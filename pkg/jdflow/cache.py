"""File-based key-value store for expensive results (solved value grids).

Keys are hashed with SHA-256 over their pickle, values are pickled. Expiration
is calculated from the file's last modified time.
"""

import os
import time
import pickle
import hashlib
from typing import Any, Callable, Optional, Union
from logging import getLogger

from jdflow.fs import ensure_path, remove_path, replace_file, temp_path_for


class Cache:
    def __init__(self, cache_path: str) -> None:
        self._logger = getLogger(self.__class__.__name__)
        self.cache_path = cache_path
        ensure_path(self.cache_path)

    @classmethod
    def _get_key_str(cls, key: Any) -> str:
        key_data = pickle.dumps(key)
        return hashlib.sha256(key_data).hexdigest()

    def _get_path(self, key: Any) -> str:
        return os.path.join(self.cache_path, self._get_key_str(key))

    def _is_fresh(self, path: str, expires: Union[int, float]) -> bool:
        if not os.path.exists(path):
            return False

        return expires < 0 or time.time() - os.path.getmtime(path) <= expires

    def get(
        self, key: Any, default: Any = None, expires: Union[int, float] = -1
    ) -> Any:
        """Return the cached value, or `default` when missing or older than
        `expires` seconds (a negative `expires` never expires).
        """
        path = self._get_path(key)
        if not self._is_fresh(path, expires):
            self._logger.debug(f"cache miss: {os.path.basename(path)}")
            return default

        with open(path, "rb") as file:
            self._logger.debug(f"cache hit: {os.path.basename(path)}")
            return pickle.loads(file.read())

    def set(self, key: Any, value: Any) -> None:
        path = self._get_path(key)
        tmp_path = temp_path_for(path)
        with open(tmp_path, "wb") as file:
            file.write(pickle.dumps(value))

        replace_file(tmp_path, path)
        self._logger.debug(f"cache set: {os.path.basename(path)}")

    def get_or_compute(
        self,
        key: Any,
        compute: Callable[[], Any],
        expires: Union[int, float] = -1,
    ) -> Any:
        sentinel = object()
        value: Optional[Any] = self.get(key, default=sentinel, expires=expires)
        if value is sentinel:
            value = compute()
            self.set(key, value)

        return value

    def purge(self) -> int:
        """Remove every file under the cache dir."""
        removed = remove_path(self.cache_path)
        self._logger.info(f"cache purged: {removed} files")
        return removed
