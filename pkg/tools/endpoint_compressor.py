"""Compressor backed by a fine-tuned model behind a chat-completions endpoint."""

from __future__ import annotations

import logging
import random

import httpx

from config import COMPRESSOR_API_KEY, COMPRESSOR_BASE_URL, COMPRESSOR_MODEL, HTTP_TIMEOUT
from promptopt.compressor import (
    OracleCompressor,
    align_compressed,
    parse_sft_completion,
    render_sft_completion,
    render_sft_messages,
    render_sft_prompt,
)
from promptopt.schemas import CompressionExample, RateSet, SegmentRecord
from tools.http_judge import ChatCompletionsEndpoint, _message_text

logger = logging.getLogger(__name__)


class EndpointCompressor:
    """Ask the model to compress, then align its output back onto the input.

    With no ``rate`` the model picks its own. A requested rate is forced by
    prefilling the assistant turn with its ``Rate = r`` line, which servers
    continue when ``continue_final_message`` is set. When no endpoint is
    configured every call falls back to the oracle compressor.
    """

    name = "endpoint"

    def __init__(
        self,
        base_url: str = COMPRESSOR_BASE_URL,
        api_key: str = COMPRESSOR_API_KEY,
        model: str = COMPRESSOR_MODEL,
        timeout: float = HTTP_TIMEOUT,
        max_output_tokens: int = 1024,
        rate_set: RateSet | None = None,
        span_protection: float = 1.0,
        seed: int = 0,
        transport: httpx.AsyncBaseTransport | None = None,
    ) -> None:
        self.model = model
        self.max_output_tokens = max_output_tokens
        self.seed = seed
        self._fallback = OracleCompressor(rate_set=rate_set, span_protection=span_protection, seed=seed)
        self._endpoint: ChatCompletionsEndpoint | None = None
        if base_url:
            self._endpoint = ChatCompletionsEndpoint(
                base_url, api_key or "none", timeout=timeout, transport=transport, label="compressor",
            )
        else:
            logger.warning("[compressor] COMPRESSOR_BASE_URL not set; using the oracle compressor")

    async def compress(
        self, record: SegmentRecord, rng: random.Random, rate: float | None = None
    ) -> CompressionExample:
        if self._endpoint is None:
            return await self._fallback.compress(record, rng, rate)

        messages = render_sft_messages(record.source, record.target)
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": 0.0,
            "max_tokens": self.max_output_tokens,
        }
        prefix = ""
        if rate is not None:
            prefix = f"Rate = {rate!r}\n"
            messages.append({"role": "assistant", "content": prefix})
            body["continue_final_message"] = True
            body["add_generation_prompt"] = False

        data = await self._endpoint.post(body)
        text = _message_text(data, "compressor")
        # Some servers echo the prefilled line, others return only the continuation.
        if prefix and not text.lstrip().startswith("Rate"):
            text = prefix + text
        parsed = parse_sft_completion(text)
        compressed_source = align_compressed(record.source, parsed.compressed_source, parsed.rate)
        compressed_target = align_compressed(record.target, parsed.compressed_target, parsed.rate)
        logger.debug(
            f"[{record.key}] compressor chose rate {parsed.rate}, kept "
            f"{compressed_source.achieved_rate:.2f}/{compressed_target.achieved_rate:.2f}"
        )
        return CompressionExample(
            record_key=record.key,
            rate=parsed.rate,
            source_spans=parsed.source_spans,
            target_spans=parsed.target_spans,
            compressed_source=compressed_source,
            compressed_target=compressed_target,
            prompt_text=render_sft_prompt(record.source, record.target),
            completion_text=render_sft_completion(
                parsed.rate, parsed.source_spans, parsed.target_spans,
                compressed_source.compressed, compressed_target.compressed,
            ),
            seed=self.seed,
        )

    async def aclose(self) -> None:
        if self._endpoint is not None:
            await self._endpoint.aclose()
