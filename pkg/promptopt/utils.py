"""Retry decorator, seeded random sources and JSONL helpers."""

from __future__ import annotations

import asyncio
import functools
import hashlib
import json
import logging
import os
import random
from pathlib import Path
from typing import Iterable, Iterator, TypeVar

from pydantic import BaseModel

from promptopt.errors import ExhaustedRetries, JudgeError

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


# ── Retry ────────────────────────────────────────────────────────────────


def _is_retryable(exc: Exception) -> bool:
    """Return True for 5xx, 429, timeout, and connection errors only."""
    import httpx

    if isinstance(exc, JudgeError):
        return False
    if isinstance(exc, httpx.HTTPStatusError):
        code = exc.response.status_code
        return code == 429 or code >= 500
    if isinstance(exc, (httpx.TimeoutException, httpx.NetworkError)):
        return True
    if isinstance(exc, (asyncio.TimeoutError, ConnectionError)):
        return True
    return False


def retry_with_backoff(max_attempts: int = 5, base_delay: float = 1.0, factor: float = 2.0):
    """Async retry decorator: exponential backoff (1s, 2s, 4s, 8s) with full jitter.

    Only retries on 5xx, 429, timeout, and connection errors. Everything else
    surfaces on the first failure. Running out of attempts raises
    ExhaustedRetries chained to the last error.
    """
    def decorator(fn):
        @functools.wraps(fn)
        async def wrapper(*args, **kwargs):
            for attempt in range(1, max_attempts + 1):
                try:
                    return await fn(*args, **kwargs)
                except Exception as e:
                    if not _is_retryable(e):
                        raise
                    if attempt == max_attempts:
                        raise ExhaustedRetries(
                            f"{fn.__qualname__} failed after {max_attempts} attempts: "
                            f"{type(e).__name__}: {e}"
                        ) from e
                    delay = random.uniform(0.0, base_delay * factor ** (attempt - 1))
                    logger.warning(
                        f"Retry {attempt}/{max_attempts} for {fn.__qualname__}: "
                        f"{type(e).__name__}: {e}. Waiting {delay:.1f}s"
                    )
                    await asyncio.sleep(delay)
        return wrapper
    return decorator


# ── Seeding ──────────────────────────────────────────────────────────────


def derive_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def derive_rng(seed: int, key: str) -> random.Random:
    """Independent random source per (global seed, record key)."""
    return random.Random(derive_seed(seed, key))


# ── JSONL ────────────────────────────────────────────────────────────────


def write_jsonl(path: str | Path, items: Iterable[BaseModel]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for item in items:
            f.write(item.model_dump_json() + "\n")
            count += 1
    os.replace(tmp, path)
    return count


def read_jsonl(path: str | Path, model: type[M]) -> Iterator[M]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield model.model_validate_json(line)


def write_json(path: str | Path, payload: BaseModel | dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
