"""Content-addressed disk cache for judge responses.

Layout: ``{cache_dir}/{digest[:2]}/{digest}.json``. Writes go to a temp file
in the same directory and are renamed into place, so concurrent writers never
leave a torn entry behind.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Protocol

from pydantic import BaseModel

from promptopt.schemas import JudgeRequest

logger = logging.getLogger(__name__)


class Cache(Protocol):
    async def get(self, key: str) -> Any | None: ...
    async def set(self, key: str, value: Any) -> None: ...
    async def delete(self, key: str) -> None: ...


def cache_key(request: JudgeRequest) -> str:
    """SHA-256 over the canonical JSON of the fields that affect the reply."""
    payload = {
        "model": request.model,
        "messages": [{"role": m.role, "content": m.content} for m in request.prompt.messages],
        "temperature": request.temperature,
        "response_format": request.response_format,
    }
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CacheStats(BaseModel):
    entries: int = 0
    bytes: int = 0


class JudgeCache:
    def __init__(self, cache_dir: str | Path) -> None:
        self.cache_dir = Path(cache_dir)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    async def get(self, key: str) -> dict | None:
        path = self.path_for(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            logger.warning(f"[cache] ignoring unreadable entry {path.name}: {e}")
            return None

    async def set(self, key: str, value: dict) -> None:
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(value, f, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    async def delete(self, key: str) -> None:
        self.path_for(key).unlink(missing_ok=True)

    def stats(self) -> CacheStats:
        if not self.cache_dir.exists():
            return CacheStats()
        files = [p for p in self.cache_dir.glob("*/*.json") if not p.name.startswith(".tmp-")]
        return CacheStats(entries=len(files), bytes=sum(p.stat().st_size for p in files))

    def clear(self) -> int:
        removed = self.stats().entries
        if self.cache_dir.exists():
            shutil.rmtree(self.cache_dir)
        logger.info(f"[cache] cleared {removed} entries from {self.cache_dir}")
        return removed
