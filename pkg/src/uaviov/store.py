"""Content-addressed blob store for trained policies.

Blobs are keyed by their lowercase hex SHA-256 digest. A directory-backed
store keeps one file per blob plus an ``index.json`` registry file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Union


class IntegrityError(Exception):
    """Stored bytes no longer match their content hash."""


class BlobNotFound(KeyError):
    pass


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ModelStore:
    def __init__(self, root: Optional[Union[str, os.PathLike]] = None):
        self.root = Path(root) if root is not None else None
        self._mem: Dict[str, bytes] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key

    def put(self, data: bytes) -> str:
        key = digest(data)
        if self.root is None:
            self._mem[key] = bytes(data)
            return key
        path = self._path(key)
        if not path.exists():
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        return key

    def get(self, key: str) -> bytes:
        key = key.lower()
        if self.root is None:
            if key not in self._mem:
                raise BlobNotFound(key)
            data = self._mem[key]
        else:
            path = self._path(key)
            if not path.is_file():
                raise BlobNotFound(key)
            data = path.read_bytes()
        if digest(data) != key:
            raise IntegrityError(f"blob {key} is corrupted")
        return data

    def __contains__(self, key: str) -> bool:
        if self.root is None:
            return key in self._mem
        return self._path(key).is_file()

    def keys(self) -> List[str]:
        if self.root is None:
            return sorted(self._mem)
        return sorted(p.name for p in self.root.iterdir() if len(p.name) == 64 and p.is_file())

    def write_index(self, entries: List[dict]) -> Optional[Path]:
        if self.root is None:
            return None
        path = self.root / "index.json"
        path.write_text(json.dumps({"version": 1, "models": entries}, indent=2, sort_keys=True))
        return path

    def read_index(self) -> List[dict]:
        if self.root is None or not (self.root / "index.json").exists():
            return []
        return json.loads((self.root / "index.json").read_text())["models"]
