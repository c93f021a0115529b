"""Span-preserving random token removal and the compression SFT template.

The oracle compressor drops surface tokens uniformly at random while keeping
every token that overlaps a gold error span. It builds the supervised
training data and stands in for a fine-tuned compressor at inference time.
"""

from __future__ import annotations

import logging
import math
import random
import re
import unicodedata
from fractions import Fraction
from typing import Protocol, runtime_checkable

from promptopt.corpus import extract_spans
from promptopt.errors import EmptyText, GrammarError
from promptopt.schemas import (
    CompressedText,
    CompressionExample,
    ErrorSpan,
    RateSet,
    SegmentRecord,
    SftCompletion,
    SurfaceToken,
)
from promptopt.utils import derive_rng

logger = logging.getLogger(__name__)

LONG_WORD = 12

SFT_SYSTEM = (
    "You are a helpful AI assistant that intelligently compresses and summarizes "
    "the given Machine Translation outputs for further evaluation."
)
SFT_USER_TEMPLATE = "Compress the following MT input and output:\nSource:```{source}```\nMT:```{mt}```"


# ── Tokenization ─────────────────────────────────────────────────────────


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _is_wide(ch: str) -> bool:
    return unicodedata.east_asian_width(ch) in ("W", "F")


def tokenize_surface(text: str) -> list[SurfaceToken]:
    """Whitespace runs with leading/trailing punctuation split off.

    Words longer than LONG_WORD characters that contain East-Asian wide
    characters fall back to one token per character.
    """
    tokens: list[SurfaceToken] = []

    def emit(start: int, end: int) -> None:
        tokens.append(SurfaceToken(text=text[start:end], char_start=start, char_end=end))

    for m in re.finditer(r"\S+", text):
        i, j = m.start(), m.end()
        while i < j and _is_punct(text[i]):
            emit(i, i + 1)
            i += 1
        trailing: list[int] = []
        while j > i and _is_punct(text[j - 1]):
            j -= 1
            trailing.append(j)
        if i < j:
            core = text[i:j]
            if len(core) > LONG_WORD and any(_is_wide(c) for c in core):
                for k in range(i, j):
                    emit(k, k + 1)
            else:
                emit(i, j)
        for k in reversed(trailing):
            emit(k, k + 1)
    return tokens


def detokenize(tokens: list[SurfaceToken]) -> str:
    return " ".join(t.text for t in tokens)


def mark_protected(tokens: list[SurfaceToken], spans: list[ErrorSpan]) -> list[SurfaceToken]:
    extents = [(s.start, s.end) for s in spans]
    return [
        t.model_copy(update={
            "protected": any(t.char_start < end and start < t.char_end for start, end in extents)
        })
        for t in tokens
    ]


# ── Compression ──────────────────────────────────────────────────────────


def keep_count(rate: float, n_tokens: int) -> int:
    # Exact decimal product so 0.7 * 10 is 7, not 7.000000000000001.
    return math.ceil(Fraction(repr(rate)) * n_tokens)


def compress_text(
    text: str,
    spans: list[ErrorSpan],
    rate: float,
    rng: random.Random,
) -> CompressedText:
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate {rate} outside (0, 1]")
    tokens = mark_protected(tokenize_surface(text), spans)
    n = len(tokens)
    if n == 0:
        raise EmptyText("cannot compress text without tokens")

    protected = [i for i, t in enumerate(tokens) if t.protected]
    keep = max(len(protected), keep_count(rate, n))
    if keep >= n:
        kept = list(range(n))
    else:
        pool = [i for i, t in enumerate(tokens) if not t.protected]
        kept = sorted(protected + rng.sample(pool, keep - len(protected)))

    return CompressedText(
        original=text,
        compressed=" ".join(tokens[i].text for i in kept),
        requested_rate=rate,
        achieved_rate=len(kept) / n,
        total_tokens=n,
        kept_token_indices=kept,
        protected_token_indices=protected,
    )


def align_compressed(original: str, compressed: str, rate: float) -> CompressedText:
    """Recover kept token indices for a compression produced elsewhere.

    Compressed tokens are matched greedily, in order, against the original
    tokens; tokens a model invented or reordered are dropped from the result.
    """
    tokens = tokenize_surface(original)
    if not tokens:
        raise EmptyText("cannot align against text without tokens")
    kept: list[int] = []
    i = 0
    for token in tokenize_surface(compressed):
        j = i
        while j < len(tokens) and tokens[j].text != token.text:
            j += 1
        if j < len(tokens):
            kept.append(j)
            i = j + 1
    return CompressedText(
        original=original,
        compressed=" ".join(tokens[k].text for k in kept),
        requested_rate=rate,
        achieved_rate=len(kept) / len(tokens),
        total_tokens=len(tokens),
        kept_token_indices=kept,
    )


def sample_rate(rng: random.Random, rate_set: RateSet) -> float:
    return rng.choice(rate_set.rates)


def record_rng(seed: int, key: str) -> random.Random:
    return derive_rng(seed, key)


# ── SFT template ─────────────────────────────────────────────────────────

_ESCAPES = {"\\": "\\\\", "[": "\\[", "]": "\\]", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "[": "[", "]": "]", "n": "\n"}


def _escape_span(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def _render_span_list(spans: list[str]) -> str:
    if not spans:
        return "None"
    return "; ".join(f"[{_escape_span(s)}]" for s in spans)


def render_sft_prompt(source: str, target: str) -> str:
    return SFT_USER_TEMPLATE.format(source=source, mt=target)


def render_sft_messages(source: str, target: str) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": SFT_SYSTEM},
        {"role": "user", "content": render_sft_prompt(source, target)},
    ]


def render_sft_completion(
    rate: float,
    source_spans: list[str],
    target_spans: list[str],
    compressed_source: str,
    compressed_target: str,
) -> str:
    return (
        f"Rate = {rate!r}\n"
        f"Quality-relevant parts of Source: {_render_span_list(source_spans)}\n"
        f"Quality-relevant parts of Translation: {_render_span_list(target_spans)}\n"
        f"Compressed Source:```{compressed_source}```\n"
        f"Compressed MT:```{compressed_target}```"
    )


_RATE_RE = re.compile(r"Rate\s*[=:]\s*(\S+)\s*$")
_SRC_SPANS_RE = re.compile(r"Quality-relevant parts of Source\s*:(.*)$")
_TGT_SPANS_RE = re.compile(r"Quality-relevant parts of (?:Translation|MT)\s*:(.*)$")
_COMP_SRC_RE = re.compile(r"Compressed Source\s*:\s*```(.*)```\s*$")
_COMP_TGT_RE = re.compile(r"Compressed (?:MT|Translation)\s*:\s*```(.*)```\s*$")


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _parse_span_list(body: str, text: str, base: int) -> list[str]:
    """Parse ``None`` or ``[a]; [b]`` (trailing ``;`` tolerated)."""
    if body.strip() == "None":
        return []
    spans: list[str] = []
    i, n = 0, len(body)
    while True:
        while i < n and body[i] in " \t;":
            i += 1
        if i == n:
            break
        if body[i] != "[":
            raise GrammarError(_byte_offset(text, base + i), f"expected '[' or None, got {body[i]!r}")
        i += 1
        buf: list[str] = []
        while True:
            if i == n:
                raise GrammarError(_byte_offset(text, base + i), "unterminated span")
            ch = body[i]
            if ch == "\\" and i + 1 < n:
                nxt = body[i + 1]
                buf.append(_UNESCAPES.get(nxt, "\\" + nxt))
                i += 2
                continue
            if ch == "]":
                i += 1
                break
            buf.append(ch)
            i += 1
        spans.append("".join(buf))
    if not spans:
        raise GrammarError(_byte_offset(text, base), "empty span list")
    return spans


def parse_sft_completion(text: str) -> SftCompletion:
    lines: list[tuple[int, str]] = []
    pos = 0
    # Only "\n" separates fields; span texts may hold other line-break characters.
    for raw in text.split("\n"):
        content = raw.rstrip("\r")
        if content.strip():
            lines.append((pos, content))
        pos += len(raw) + 1

    def line_at(idx: int, what: str) -> tuple[int, str]:
        if idx >= len(lines):
            raise GrammarError(_byte_offset(text, len(text)), f"missing {what} line")
        return lines[idx]

    start, line = line_at(0, "Rate")
    m = _RATE_RE.match(line.lstrip())
    if not m:
        raise GrammarError(_byte_offset(text, start), "expected 'Rate = r'")
    try:
        rate = float(m.group(1))
    except ValueError:
        raise GrammarError(_byte_offset(text, start + m.start(1)), f"bad rate {m.group(1)!r}")
    if not 0.0 < rate <= 1.0:
        raise GrammarError(_byte_offset(text, start + m.start(1)), f"rate {rate} outside (0, 1]")

    fields: list = []
    for idx, (pattern, what) in enumerate(
        ((_SRC_SPANS_RE, "source span list"), (_TGT_SPANS_RE, "translation span list")), start=1
    ):
        start, line = line_at(idx, what)
        stripped = line.lstrip()
        m = pattern.match(stripped)
        if not m:
            raise GrammarError(_byte_offset(text, start), f"expected {what}")
        base = start + (len(line) - len(stripped)) + m.start(1)
        fields.append(_parse_span_list(m.group(1), text, base))

    for idx, (pattern, what) in enumerate(
        ((_COMP_SRC_RE, "compressed source"), (_COMP_TGT_RE, "compressed MT")), start=3
    ):
        start, line = line_at(idx, what)
        m = pattern.match(line.lstrip())
        if not m:
            raise GrammarError(_byte_offset(text, start), f"expected fenced {what}")
        fields.append(m.group(1))

    if len(lines) > 5:
        raise GrammarError(_byte_offset(text, lines[5][0]), "unexpected trailing content")

    return SftCompletion(
        rate=rate,
        source_spans=fields[0],
        target_spans=fields[1],
        compressed_source=fields[2],
        compressed_target=fields[3],
    )


# ── Examples ─────────────────────────────────────────────────────────────


def _maybe_protect(spans: list[ErrorSpan], prob: float, rng: random.Random) -> list[ErrorSpan]:
    if prob >= 1.0:
        return spans
    return [s for s in spans if rng.random() < prob]


def build_sft_example(
    record: SegmentRecord,
    rng: random.Random,
    rate_set: RateSet,
    rate: float | None = None,
    span_protection: float = 1.0,
    seed: int = 0,
) -> CompressionExample:
    """Sample a rate, compress both sides and render prompt/completion."""
    if rate is None:
        rate = sample_rate(rng, rate_set)
    source_spans, target_spans = extract_spans(record)
    source_spans = _maybe_protect(source_spans, span_protection, rng)
    target_spans = _maybe_protect(target_spans, span_protection, rng)

    compressed_source = compress_text(record.source, source_spans, rate, rng)
    compressed_target = compress_text(record.target, target_spans, rate, rng)
    source_texts = [s.text for s in source_spans]
    target_texts = [s.text for s in target_spans]

    return CompressionExample(
        record_key=record.key,
        rate=rate,
        source_spans=source_texts,
        target_spans=target_texts,
        compressed_source=compressed_source,
        compressed_target=compressed_target,
        prompt_text=render_sft_prompt(record.source, record.target),
        completion_text=render_sft_completion(
            rate, source_texts, target_texts,
            compressed_source.compressed, compressed_target.compressed,
        ),
        seed=seed,
    )


# ── Compressor backends ──────────────────────────────────────────────────


@runtime_checkable
class Compressor(Protocol):
    name: str

    async def compress(
        self, record: SegmentRecord, rng: random.Random, rate: float | None = None
    ) -> CompressionExample: ...


class OracleCompressor:
    """Gold-span protecting compressor.

    ``span_protection`` below 1.0 protects each gold span only with that
    probability, which models a learned compressor that sometimes misses spans.
    """

    name = "oracle"

    def __init__(
        self,
        rate_set: RateSet | None = None,
        span_protection: float = 1.0,
        seed: int = 0,
    ) -> None:
        if not 0.0 <= span_protection <= 1.0:
            raise ValueError("span_protection must be within [0, 1]")
        self.rate_set = rate_set or RateSet.default()
        self.span_protection = span_protection
        self.seed = seed

    async def compress(
        self, record: SegmentRecord, rng: random.Random, rate: float | None = None
    ) -> CompressionExample:
        return build_sft_example(
            record, rng, self.rate_set, rate=rate,
            span_protection=self.span_protection, seed=self.seed,
        )
