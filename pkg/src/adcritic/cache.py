"""Content-addressed file cache for model responses.

One entry is two files: ``<key>.resp`` holds the raw response bytes and
``<key>.req`` echoes the canonical request that produced it. Writes go
through a temp file and an atomic rename, so concurrent workers can share a
cache directory; replaying a key returns the stored bytes unchanged.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import CacheCorrupt


@dataclass(frozen=True, slots=True)
class CacheEntry:
    key: str
    request_echo: bytes
    response: bytes
    created_at: float


class FileCache:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _resp_path(self, key: str) -> Path:
        return self.directory / f"{key}.resp"

    def _req_path(self, key: str) -> Path:
        return self.directory / f"{key}.req"

    def __contains__(self, key: str) -> bool:
        return self._resp_path(key).exists()

    def get(self, key: str) -> bytes | None:
        path = self._resp_path(key)
        if not path.exists():
            return None
        try:
            return path.read_bytes()
        except OSError as exc:
            raise CacheCorrupt(f"cannot read cache entry {key}: {exc}") from exc

    def put(self, key: str, request_echo: bytes, response: bytes) -> None:
        self._atomic_write(self._req_path(key), request_echo)
        self._atomic_write(self._resp_path(key), response)

    def entry(self, key: str) -> CacheEntry:
        response = self.get(key)
        if response is None:
            raise CacheCorrupt(f"no cache entry {key}")
        req_path = self._req_path(key)
        try:
            request_echo = req_path.read_bytes()
        except OSError as exc:
            raise CacheCorrupt(f"cache entry {key} lost its request echo") from exc
        return CacheEntry(
            key=key,
            request_echo=request_echo,
            response=response,
            created_at=self._resp_path(key).stat().st_mtime,
        )

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.resp"))

    def _atomic_write(self, path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
