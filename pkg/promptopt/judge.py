"""Judge client: cache lookup, bounded concurrency and in-flight de-duplication
in front of a pluggable backend (http, mock or synthetic)."""

from __future__ import annotations

import asyncio
import logging
import time
from typing import Sequence

from config import MAX_CONCURRENCY
from promptopt import observe
from promptopt.cache import Cache, cache_key
from promptopt.judge_protocol import JudgeBackend
from promptopt.schemas import JudgeRequest, JudgeResponse

logger = logging.getLogger(__name__)


class JudgeClient:
    def __init__(
        self,
        backend: JudgeBackend,
        cache: Cache | None = None,
        max_concurrency: int = MAX_CONCURRENCY,
        trace_id: str = "run",
    ) -> None:
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be at least 1")
        self.backend = backend
        self.cache = cache
        self.trace_id = trace_id
        self.backend_calls = 0
        self._semaphore = asyncio.Semaphore(max_concurrency)
        self._inflight: dict[str, asyncio.Future[JudgeResponse]] = {}

    async def complete(self, request: JudgeRequest) -> JudgeResponse:
        key = cache_key(request)
        if self.cache is not None:
            hit = await self.cache.get(key)
            if hit is not None:
                return JudgeResponse.model_validate({**hit, "cached": True})

        pending = self._inflight.get(key)
        if pending is not None:
            logger.debug(f"[{self.trace_id}] dedup: waiting on in-flight {key[:12]}")
            response = await asyncio.shield(pending)
            return response.model_copy(update={"cached": True})

        future: asyncio.Future[JudgeResponse] = asyncio.get_running_loop().create_future()
        self._inflight[key] = future
        try:
            response = await self._call_backend(request, key)
            future.set_result(response)
            return response
        except asyncio.CancelledError:
            future.cancel()
            raise
        except Exception as e:
            future.set_exception(e)
            future.exception()  # mark retrieved when nobody else is waiting
            raise
        finally:
            self._inflight.pop(key, None)

    async def _call_backend(self, request: JudgeRequest, key: str) -> JudgeResponse:
        async with self._semaphore:
            t0 = time.time()
            response = await self.backend.complete(request)
            latency_ms = (time.time() - t0) * 1000
        self.backend_calls += 1
        observe.log_judge_generation(self.trace_id, request, response, latency_ms)
        if self.cache is not None:
            await self.cache.set(key, response.model_dump(mode="json", exclude={"cached"}))
        return response

    async def complete_many(
        self, requests: Sequence[JudgeRequest], return_exceptions: bool = False
    ) -> list[JudgeResponse | BaseException]:
        """Judge all requests; results come back in input order."""
        return await asyncio.gather(
            *(self.complete(r) for r in requests), return_exceptions=return_exceptions
        )

    async def aclose(self) -> None:
        close = getattr(self.backend, "aclose", None)
        if close is not None:
            await close()
