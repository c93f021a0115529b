"""Offline judge that answers from gold spans.

A gold span is reported only if the (possibly compressed) segment embedded in
the prompt still holds its tokens at their own positions, so reply quality
depends on which spans survive compression.
"""

from __future__ import annotations

import logging
import random
from typing import Iterable

from promptopt.compressor import tokenize_surface
from promptopt.errors import BadRequest
from promptopt.prompt_kit import TokenCounter, count_tokens, parse_target
from promptopt.schemas import (
    ChatPrompt,
    ErrorItem,
    ErrorSpan,
    JudgeRequest,
    JudgeResponse,
    ParsedErrors,
    PromptKind,
    SegmentRecord,
    SyntheticNoise,
)
from promptopt.scoring import render_classic, render_lite
from promptopt.utils import derive_rng

logger = logging.getLogger(__name__)

DEFAULT_CATEGORY = "accuracy/mistranslation"
_FLIP = {"minor": "major", "major": "minor"}


class _Alignment:
    """Order-preserving embeddings of compressed tokens into the original ones.

    ``prefix[k]`` is the shortest original prefix holding ``compressed[:k]`` and
    ``suffix[k]`` the latest original start still holding ``compressed[k:]``;
    both come from greedy matching, which is optimal for subsequences.
    """

    def __init__(self, original: str, compressed: str) -> None:
        self.original = tokenize_surface(original)
        self.compressed = [t.text for t in tokenize_surface(compressed)]
        texts = [t.text for t in self.original]
        n, m = len(texts), len(self.compressed)

        self.prefix: list[int] = [0]
        i = 0
        for token in self.compressed:
            while i < n and texts[i] != token:
                i += 1
            if i == n:
                break
            i += 1
            self.prefix.append(i)

        self.suffix: list[int | None] = [None] * m + [n]
        j = n
        for k in range(m - 1, -1, -1):
            j -= 1
            while j >= 0 and texts[j] != self.compressed[k]:
                j -= 1
            if j < 0:
                break
            self.suffix[k] = j

    def keeps(self, span: ErrorSpan) -> bool:
        """True when some embedding maps compressed tokens onto every token of ``span``."""
        covered = [
            i for i, t in enumerate(self.original) if t.char_start < span.end and span.start < t.char_end
        ]
        if not covered:
            return True
        lo, hi = covered[0], covered[-1]
        window = [self.original[i].text for i in range(lo, hi + 1)]
        for k in range(len(self.compressed) - len(window) + 1):
            if self.compressed[k:k + len(window)] != window or k >= len(self.prefix):
                continue
            after = self.suffix[k + len(window)]
            if self.prefix[k] <= lo and after is not None and after > hi:
                return True
        return False


def _embedded_segments(record: SegmentRecord, prompt: ChatPrompt | None, kind: PromptKind) -> tuple[str, str]:
    if prompt is None or not prompt.messages:
        return record.source, record.target
    target = parse_target(kind, prompt.messages[-1].content)
    if target is None:
        raise BadRequest(f"[{record.key}] last user message is not a {kind} prompt")
    return target.source_seg, target.target_seg


def synthetic_judge(
    record: SegmentRecord,
    prompt_kind: PromptKind,
    noise: SyntheticNoise,
    rng: random.Random,
    prompt: ChatPrompt | None = None,
    counter: TokenCounter | None = None,
) -> JudgeResponse:
    """Render a judge reply listing the gold spans that survive in ``prompt``.

    Without a prompt the record is treated as uncompressed. Each span consumes
    exactly two draws from ``rng`` (drop, flip) whether or not it survives, so
    a span's noise never depends on the others.
    """
    counter = counter or TokenCounter.builtin()
    source_seg, target_seg = _embedded_segments(record, prompt, prompt_kind)
    alignments = {
        "source": _Alignment(record.source, source_seg),
        "target": _Alignment(record.target, target_seg),
    }
    sections: dict[str, list[ErrorItem]] = {"critical": [], "major": [], "minor": []}
    for span in record.spans:
        drop = rng.random() < noise.span_drop_prob
        flip = rng.random() < noise.severity_flip_prob
        if span.severity == "neutral" or drop:
            continue
        if not alignments[span.side].keeps(span):
            continue
        severity = _FLIP.get(span.severity, span.severity) if flip else span.severity
        sections[severity].append(ErrorItem(
            category=span.category or DEFAULT_CATEGORY,
            span_text=" ".join(span.text.split()),
        ))

    errors = ParsedErrors(**sections)
    text = render_lite(errors) if prompt_kind == "lite" else render_classic(errors)
    return JudgeResponse(
        text=text,
        prompt_tokens=count_tokens(prompt, counter) if prompt is not None else 0,
        completion_tokens=counter.count_text(text),
        backend="synthetic",
    )


class SyntheticJudge:
    """Judge backend that routes requests to their record by ``record_key``.

    The prompt kind is inferred from the response format (json means lite).
    """

    name = "synthetic"

    def __init__(
        self,
        records: Iterable[SegmentRecord] = (),
        noise: SyntheticNoise | None = None,
        seed: int = 0,
        counter: TokenCounter | None = None,
        **_: object,
    ) -> None:
        self.records = {r.key: r for r in records}
        self.noise = noise or SyntheticNoise()
        self.seed = seed
        self.counter = counter or TokenCounter.builtin()
        self.calls = 0

    def add_records(self, records: Iterable[SegmentRecord]) -> None:
        self.records.update((r.key, r) for r in records)

    async def complete(self, request: JudgeRequest) -> JudgeResponse:
        self.calls += 1
        record = self.records.get(request.record_key or "")
        if record is None:
            raise BadRequest(f"synthetic judge has no record {request.record_key!r}")
        kind: PromptKind = "lite" if request.response_format == "json" else "classic"
        return synthetic_judge(
            record, kind, self.noise, derive_rng(self.seed, record.key),
            prompt=request.prompt, counter=self.counter,
        )
