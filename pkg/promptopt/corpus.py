"""MQM corpus parsing, canonical JSONL storage and a synthetic corpus generator.

WMT MQM releases are tab-separated with one row per (rater, error). Error
extents are marked inline with ``<v>...</v>`` in the target (or source)
column; the parser strips the markers and converts them to character offsets.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Literal

from pydantic import ValidationError

from promptopt.errors import CorpusError, EncodingError, MalformedRow, SpanOutOfBounds
from promptopt.schemas import (
    Corpus,
    ErrorSpan,
    RejectedRow,
    SegmentRecord,
    SeverityWeights,
    normalize_severity,
)
from promptopt.utils import derive_rng, read_jsonl as _read_models, write_jsonl as _write_models

logger = logging.getLogger(__name__)

SidePolicy = Literal["category", "target"]

TSV_COLUMNS = (
    "system", "domain", "doc", "doc_id", "seg_id",
    "rater", "source", "target", "category", "severity",
)

_OPEN = "<v>"
_MARKER_RE = re.compile(r"</?v>")

_LANG_NAMES = {
    "en": "English", "de": "German", "cs": "Czech", "zh": "Chinese",
    "ru": "Russian", "ja": "Japanese", "fr": "French", "es": "Spanish",
    "uk": "Ukrainian", "he": "Hebrew", "pl": "Polish", "ta": "Tamil",
    "is": "Icelandic", "ha": "Hausa", "km": "Khmer", "ps": "Pashto",
    "it": "Italian", "pt": "Portuguese", "ko": "Korean", "hr": "Croatian",
}


def lang_name(code: str) -> str:
    return _LANG_NAMES.get(code.lower(), code)


def lang_code(name: str) -> str:
    for code, full in _LANG_NAMES.items():
        if full.lower() == name.lower():
            return code
    return name.lower()[:2]


def record_key(record: SegmentRecord) -> str:
    return record.key


# ── Marker handling ──────────────────────────────────────────────────────


def _strip_markers(text: str, row: int) -> tuple[str, list[tuple[int, int]]]:
    """Remove ``<v>``/``</v>`` and return the clean text plus marked extents."""
    clean: list[str] = []
    extents: list[tuple[int, int]] = []
    pos = 0
    length = 0
    open_at: int | None = None
    for m in _MARKER_RE.finditer(text):
        chunk = text[pos:m.start()]
        clean.append(chunk)
        length += len(chunk)
        if m.group() == _OPEN:
            if open_at is not None:
                raise MalformedRow(row, "nested <v> marker")
            open_at = length
        else:
            if open_at is None:
                raise MalformedRow(row, "</v> without matching <v>")
            extents.append((open_at, length))
            open_at = None
        pos = m.end()
    if open_at is not None:
        raise MalformedRow(row, "unclosed <v> marker")
    clean.append(text[pos:])
    return "".join(clean), extents


# ── TSV parsing ──────────────────────────────────────────────────────────


@dataclass
class _Group:
    first_row: int
    source: str
    target: str
    spans: list[ErrorSpan] = field(default_factory=list)
    rater_penalties: dict[str, float] = field(default_factory=lambda: defaultdict(float))


def _row_spans(
    row: dict[str, str],
    line: int,
    source: str,
    target: str,
    source_marks: list[tuple[int, int]],
    target_marks: list[tuple[int, int]],
    side_policy: SidePolicy,
) -> list[ErrorSpan]:
    severity = row["severity"]
    category = row["category"] or None
    is_source = (
        side_policy == "category"
        and bool(category)
        and category.strip().lower().startswith("source")
    )

    def make(start: int, end: int, side: str, text: str) -> ErrorSpan:
        return ErrorSpan(
            start=start, end=end, severity=severity, category=category,
            text=text[start:end], side=side,
        )

    if is_source:
        if source_marks:
            return [make(s, e, "source", source) for s, e in source_marks]
        spans = []
        for s, e in target_marks:
            # Marked in the target column: re-resolve the quoted text against the source.
            needle = target[s:e]
            at = source.find(needle) if needle else -1
            if at < 0:
                raise MalformedRow(line, f"source-category span {needle!r} not found in source")
            spans.append(make(at, at + len(needle), "source", source))
        return spans

    if source_marks and not target_marks:
        raise MalformedRow(line, f"category {category!r} marks only the source text")
    return [make(s, e, "target", target) for s, e in target_marks]


def _explicit_span(row: dict[str, str], line: int, target: str) -> ErrorSpan | None:
    """Offset-style rows carry span_start/span_end/span_text columns instead of markers."""
    raw_start = (row.get("span_start") or "").strip()
    if not raw_start:
        return None
    try:
        start, end = int(raw_start), int(row["span_end"])
    except (TypeError, ValueError):
        raise MalformedRow(line, "span offsets are not integers")
    text = row.get("span_text") or ""
    if start < 0 or end < start or end > len(target):
        raise SpanOutOfBounds(line, f"offsets [{start}, {end}) exceed target of length {len(target)}")
    if target[start:end] != text:
        raise SpanOutOfBounds(
            line, f"span text {text!r} does not match slice {target[start:end]!r}"
        )
    return ErrorSpan(
        start=start, end=end, severity=row["severity"],
        category=row["category"] or None, text=text, side="target",
    )


def parse_wmt_tsv(
    stream: IO[str] | IO[bytes],
    side_policy: SidePolicy = "category",
    lang_pair: str = "en-de",
    weights: SeverityWeights | None = None,
    provenance: str = "",
) -> Corpus:
    """Parse a WMT MQM ratings file into a Corpus.

    Rows that fail validation are collected on ``Corpus.rejected`` with their
    line number; they never abort the parse.
    """
    weights = weights or SeverityWeights()
    if not isinstance(stream, io.TextIOBase):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")

    rejected: list[RejectedRow] = []
    line = 1
    groups: dict[tuple[str, str, str, int], _Group] = {}

    try:
        reader = csv.DictReader(stream, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = reader.fieldnames
        if header is None:
            return Corpus(provenance=provenance)
        missing = [c for c in TSV_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(1, f"header lacks columns {missing}")

        for row in reader:
            line = reader.line_num
            try:
                if None in row or any(v is None for v in row.values()):
                    raise MalformedRow(
                        line, f"expected {len(header)} columns"
                    )
                try:
                    seg_id = int(row["seg_id"])
                except ValueError:
                    raise MalformedRow(line, f"seg_id {row['seg_id']!r} is not an integer")
                lp = (row.get("lang_pair") or lang_pair).strip()
                source, source_marks = _strip_markers(row["source"], line)
                target, target_marks = _strip_markers(row["target"], line)

                explicit = _explicit_span(row, line, target)
                spans = [explicit] if explicit else _row_spans(
                    row, line, source, target, source_marks, target_marks, side_policy
                )

                gkey = (lp, row["system"], row["doc"], seg_id)
                group = groups.get(gkey)
                if group is None:
                    group = groups[gkey] = _Group(first_row=line, source=source, target=target)
                elif (source, target) != (group.source, group.target):
                    raise SpanOutOfBounds(
                        line,
                        f"text differs from row {group.first_row} for the same segment",
                    )
                group.spans.extend(spans)
                severity = normalize_severity(row["severity"])
                group.rater_penalties[row["rater"]] += (
                    getattr(weights, severity) if severity != "neutral" else 0.0
                )
            except CorpusError as e:
                logger.warning(f"[corpus] rejected {e}")
                rejected.append(RejectedRow(row=e.row, kind=type(e).__name__, message=str(e)))
            except ValidationError as e:
                logger.warning(f"[corpus] rejected row {line}: {e.errors()[0]['msg']}")
                rejected.append(RejectedRow(row=line, kind="MalformedRow", message=str(e)))
    except UnicodeDecodeError as e:
        raise EncodingError(line + 1, f"input is not UTF-8: {e.reason}") from e

    records: list[SegmentRecord] = []
    for (lp, system, doc, seg_id), group in groups.items():
        penalties = group.rater_penalties
        human = -sum(penalties.values()) / len(penalties) if penalties else None
        try:
            records.append(SegmentRecord(
                lang_pair=lp, system_id=system, doc_id=doc, seg_id=seg_id,
                source=group.source, target=group.target,
                spans=sorted(group.spans, key=lambda s: (s.start, s.end)),
                human_score=human,
            ))
        except ValidationError as e:
            rejected.append(RejectedRow(
                row=group.first_row, kind="MalformedRow", message=str(e),
            ))

    logger.info(
        f"[corpus] parsed {len(records)} records from {provenance or 'stream'}"
        f" ({len(rejected)} rejected rows)"
    )
    return Corpus(records=records, provenance=provenance, rejected=rejected)


def extract_spans(record: SegmentRecord) -> tuple[list[ErrorSpan], list[ErrorSpan]]:
    order = lambda s: (s.start, s.end)  # noqa: E731
    source = sorted((s for s in record.spans if s.side == "source"), key=order)
    target = sorted((s for s in record.spans if s.side == "target"), key=order)
    return source, target


# ── Canonical JSONL ──────────────────────────────────────────────────────


def write_jsonl(corpus: Corpus, path: str | Path) -> int:
    return _write_models(path, corpus.records)


def read_jsonl(path: str | Path) -> Corpus:
    return Corpus(records=list(_read_models(path, SegmentRecord)), provenance=str(path))


def load_corpus(
    path: str | Path,
    side_policy: SidePolicy = "category",
    lang_pair: str | None = None,
    weights: SeverityWeights | None = None,
) -> Corpus:
    """Load a corpus from ``.jsonl`` (canonical) or ``.tsv`` (WMT MQM)."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_jsonl(path)
    lp = lang_pair or _infer_lang_pair(path.name)
    with open(path, "rb") as f:
        return parse_wmt_tsv(f, side_policy=side_policy, lang_pair=lp,
                             weights=weights, provenance=str(path))


def _infer_lang_pair(name: str) -> str:
    """mqm_newstest2021_ende.tsv -> en-de"""
    m = re.search(r"_([a-z]{2})([a-z]{2})(?:\.|_)", name)
    return f"{m.group(1)}-{m.group(2)}" if m else "en-de"


# ── Synthetic corpus ─────────────────────────────────────────────────────

_VOCAB = {
    "en": (
        "the council approved a new budget for public transport after months of debate "
        "residents said that buses were often late and trains too crowded while the mayor "
        "promised better service cleaner stations and lower fares for students and workers"
    ).split(),
    "de": (
        "der Rat hat nach monatelanger Debatte einen neuen Haushalt für den Nahverkehr "
        "beschlossen Anwohner sagten dass Busse oft zu spät kamen und Züge überfüllt waren "
        "während die Bürgermeisterin besseren Service sauberere Bahnhöfe versprach"
    ).split(),
    "ru": (
        "совет утвердил новый бюджет на общественный транспорт после долгих споров "
        "жители говорили что автобусы часто опаздывают а поезда переполнены мэр "
        "обещал лучшее обслуживание чистые станции и низкие тарифы для студентов"
    ).split(),
}
_ZH_CHARS = "市议会经过数月辩论批准了新的公共交通预算居民说公交车经常晚点火车太拥挤市长承诺更好服务更干净车站"
_SEVERITY_DRAW = (("minor", 0.6), ("major", 0.3), ("critical", 0.1))
_CATEGORIES = (
    "accuracy/mistranslation", "fluency/grammar", "accuracy/omission",
    "terminology/inappropriate for context", "style/awkward",
)

SYNTHETIC_LANG_PAIRS = ("en-ru", "en-de", "zh-en")


def _sentence(rng, lang: str) -> str:
    if lang == "zh":
        n = rng.randint(18, 30)
        body = "".join(rng.choice(_ZH_CHARS) for _ in range(n))
        cut = rng.randint(6, n - 6)
        return f"{body[:cut]}，{body[cut:]}。"
    words = [rng.choice(_VOCAB[lang]) for _ in range(rng.randint(12, 24))]
    words[0] = words[0][:1].upper() + words[0][1:]
    return " ".join(words) + "."


def _pick_severity(rng) -> str:
    x = rng.random()
    for name, p in _SEVERITY_DRAW:
        if x < p:
            return name
        x -= p
    return "minor"


def synthesize_corpus(
    n_segments: int,
    seed: int = 0,
    lang_pairs: tuple[str, ...] = SYNTHETIC_LANG_PAIRS,
    n_systems: int = 4,
    weights: SeverityWeights | None = None,
) -> Corpus:
    """Deterministic MQM-style corpus with gold target spans and human scores.

    Systems are ordered by quality: system ``k`` draws up to ``k + 1`` error
    spans per segment, so system-level rankings are well defined.
    """
    weights = weights or SeverityWeights()
    systems = [f"sys{k}" for k in range(n_systems)]
    records: list[SegmentRecord] = []
    n_lp = len(lang_pairs)
    for i in range(n_segments):
        lp = lang_pairs[i % n_lp]
        k = (i // n_lp) % n_systems
        seg_id = i // (n_lp * n_systems)
        src_lang, tgt_lang = lp.split("-")
        source = _sentence(derive_rng(seed, f"{lp}/source/{seg_id}"), src_lang)

        key = f"{lp}/{systems[k]}/doc{seg_id // 10}/{seg_id}"
        rng = derive_rng(seed, key)
        target = _sentence(rng, tgt_lang)

        # Candidate word extents, excluding the sentence-final period.
        extents: list[tuple[int, int]] = []
        pos = 0
        for word in target[:-1].split(" "):
            extents.append((pos, pos + len(word)))
            pos += len(word) + 1
        n_spans = min(rng.randint(0, k + 1), len(extents))
        chosen = sorted(rng.sample(range(len(extents)), n_spans))
        spans = []
        for idx in chosen:
            start, end = extents[idx]
            spans.append(ErrorSpan(
                start=start, end=end, severity=_pick_severity(rng),
                category=rng.choice(_CATEGORIES), text=target[start:end], side="target",
            ))
        human = -sum(getattr(weights, s.severity) for s in spans)
        records.append(SegmentRecord(
            lang_pair=lp, system_id=systems[k], doc_id=f"doc{seg_id // 10}",
            seg_id=seg_id, source=source, target=target, spans=spans,
            human_score=float(human),
        ))
    logger.info(f"[corpus] synthesized {len(records)} records (seed={seed})")
    return Corpus(records=records, provenance=f"synthetic:{n_segments}:{seed}")
