"""GEMBA-MQM prompt rendering (classic and lite), token counting and cost.

The template files under ``templates/`` are the source of truth for both
prompt variants; rendering only substitutes the ``{placeholder}`` fields.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from pathlib import Path
from typing import Literal, Mapping

from promptopt.compressor import tokenize_surface
from promptopt.corpus import lang_code
from promptopt.errors import MissingField, VocabError
from promptopt.schemas import (
    ChatMessage,
    ChatPrompt,
    ErrorSpan,
    FewShotExample,
    PromptKind,
    PromptTarget,
    SegmentRecord,
)
from promptopt.scoring import parse_classic

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"
TARGET_FIELDS = ("source_lang", "target_lang", "source_seg", "target_seg")

CounterMode = Literal["builtin_surface", "external_vocab"]

# Lite few-shot turns close the translation fence with ``;``, the final turn does not.
FEWSHOT_USER_TEMPLATES = {"classic": "gemba_classic_user.txt", "lite": "gemba_lite_fewshot_user.txt"}


# ── Templates ────────────────────────────────────────────────────────────


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = (TEMPLATE_DIR / name).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


@lru_cache(maxsize=1)
def _fewshot_table() -> tuple[FewShotExample, ...]:
    raw = json.loads((TEMPLATE_DIR / "fewshots.json").read_text(encoding="utf-8"))
    return tuple(FewShotExample.model_validate(item) for item in raw)


def load_fewshots(count: int = 3) -> list[FewShotExample]:
    if not 0 <= count <= 3:
        raise ValueError("fewshot count must be between 0 and 3")
    return list(_fewshot_table()[:count])


def _target_values(target: PromptTarget | Mapping[str, str]) -> dict[str, str]:
    if isinstance(target, PromptTarget):
        return target.model_dump()
    values = {}
    for name in TARGET_FIELDS:
        if name not in target or target[name] is None:
            raise MissingField(name)
        values[name] = str(target[name])
    return values


def _render(
    kind: PromptKind,
    target: PromptTarget | Mapping[str, str],
    fewshots: list[FewShotExample],
) -> ChatPrompt:
    if len(fewshots) > 3:
        raise ValueError("at most 3 few-shot examples")
    system = load_template(f"gemba_{kind}_system.txt")
    user = load_template(f"gemba_{kind}_user.txt")
    shot_user = load_template(FEWSHOT_USER_TEMPLATES[kind])

    messages = [ChatMessage(role="system", content=system)]
    for shot in fewshots:
        messages.append(ChatMessage(role="user", content=shot_user.format(
            source_lang=shot.source_lang, target_lang=shot.target_lang,
            source_seg=shot.source_seg, target_seg=shot.target_seg,
        )))
        reply = shot.assistant_reply_lite_json if kind == "lite" else shot.assistant_reply_classic
        messages.append(ChatMessage(role="assistant", content=reply))
    try:
        content = user.format(**_target_values(target))
    except KeyError as e:
        raise MissingField(str(e.args[0])) from e
    messages.append(ChatMessage(role="user", content=content))
    return ChatPrompt(messages=messages)


def render_original(
    target: PromptTarget | Mapping[str, str], fewshots: list[FewShotExample]
) -> ChatPrompt:
    return _render("classic", target, fewshots)


def render_lite(
    target: PromptTarget | Mapping[str, str], fewshots: list[FewShotExample]
) -> ChatPrompt:
    return _render("lite", target, fewshots)


def render_prompt(
    kind: PromptKind,
    target: PromptTarget | Mapping[str, str],
    fewshots: list[FewShotExample],
) -> ChatPrompt:
    return _render(kind, target, fewshots)


# ── Few-shot compression support ─────────────────────────────────────────


def fewshot_record(shot: FewShotExample, index: int) -> SegmentRecord:
    """Turn a few-shot example into a record whose spans are its quoted errors.

    Quotes are located in the translation first, then in the source (omissions
    quote source text). Quotes found in neither are not protected.
    """
    parsed = parse_classic(shot.assistant_reply_classic)
    spans: list[ErrorSpan] = []
    for severity in ("critical", "major", "minor"):
        for item in getattr(parsed, severity):
            quote = item.span_text
            if not quote:
                continue
            for side, text in (("target", shot.target_seg), ("source", shot.source_seg)):
                at = text.find(quote)
                if at >= 0:
                    spans.append(ErrorSpan(
                        start=at, end=at + len(quote), severity=severity,
                        category=item.category, text=quote, side=side,
                    ))
                    break
    return SegmentRecord(
        lang_pair=f"{lang_code(shot.source_lang)}-{lang_code(shot.target_lang)}",
        system_id="fewshot",
        doc_id="appendix",
        seg_id=index,
        source=shot.source_seg,
        target=shot.target_seg,
        spans=sorted(spans, key=lambda s: (s.start, s.end)),
    )


# ── Token counting ───────────────────────────────────────────────────────


@lru_cache(maxsize=1)
def byte_alphabet() -> tuple[str, ...]:
    """One printable character per byte value, the alphabet byte-level merges files are written in."""
    printable = {*range(ord("!"), ord("~") + 1), *range(0xA1, 0xAD), *range(0xAE, 0x100)}
    table, extra = [], 0
    for b in range(256):
        if b in printable:
            table.append(chr(b))
        else:
            table.append(chr(256 + extra))
            extra += 1
    return tuple(table)


@dataclass(frozen=True)
class TokenCounter:
    """Prompt token counts from surface tokens or a byte-level BPE merges table.

    The configuration is immutable. ``_pieces`` memoises per-word piece counts
    and takes no part in equality. Merges run over UTF-8 bytes mapped through
    ``byte_alphabet``, so an unmerged non-ASCII character counts once per byte.
    """

    mode: CounterMode = "builtin_surface"
    merges: Mapping[tuple[str, str], int] | None = None
    _pieces: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.mode == "external_vocab" and self.merges is None:
            raise VocabError("external_vocab counting needs a merges table")

    @classmethod
    def builtin(cls) -> TokenCounter:
        return cls(mode="builtin_surface")

    @classmethod
    def from_merges_file(cls, path: str | Path) -> TokenCounter:
        """Load a BPE merges file: one ``left right`` pair per line, rank = order."""
        merges: dict[tuple[str, str], int] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#version"):
                    continue
                parts = line.split(" ")
                if len(parts) != 2 or not all(parts):
                    raise VocabError(f"{path}:{lineno}: expected 'left right', got {line!r}")
                merges.setdefault((parts[0], parts[1]), len(merges))
        return cls(mode="external_vocab", merges=merges)

    def _bpe_pieces(self, word: str) -> int:
        cached = self._pieces.get(word)
        if cached is not None:
            return cached
        alphabet = byte_alphabet()
        symbols = [alphabet[b] for b in word.encode("utf-8")]
        while len(symbols) > 1:
            ranked = [
                (self.merges.get((a, b)), i)
                for i, (a, b) in enumerate(zip(symbols, symbols[1:]))
                if (a, b) in self.merges
            ]
            if not ranked:
                break
            _, i = min(ranked)
            symbols[i:i + 2] = [symbols[i] + symbols[i + 1]]
        self._pieces[word] = len(symbols)
        return len(symbols)

    def count_text(self, text: str) -> int:
        units = tokenize_surface(text)
        if self.mode == "builtin_surface":
            return len(units)
        return sum(self._bpe_pieces(u.text) for u in units)


def count_tokens(prompt: ChatPrompt, counter: TokenCounter) -> int:
    return sum(counter.count_text(m.content) for m in prompt.messages)


def estimate_cost(total_tokens: int, price_per_million: Decimal | str | int) -> Decimal:
    if total_tokens < 0:
        raise ValueError("total_tokens must be non-negative")
    price = Decimal(str(price_per_million))
    if price < 0:
        raise ValueError("price must be non-negative")
    return Decimal(total_tokens) / Decimal(1_000_000) * price


# ── Reading prompts back ─────────────────────────────────────────────────


@lru_cache(maxsize=None)
def _target_pattern(kind: PromptKind) -> re.Pattern[str]:
    pattern = re.escape(load_template(f"gemba_{kind}_user.txt"))
    for name in TARGET_FIELDS:
        pattern = pattern.replace(re.escape("{" + name + "}"), f"(?P<{name}>.*?)")
    return re.compile(pattern, re.DOTALL)


def parse_target(kind: PromptKind, content: str) -> PromptTarget | None:
    """Recover the substituted fields from a rendered human message."""
    m = _target_pattern(kind).fullmatch(content)
    return PromptTarget(**m.groupdict()) if m else None
