import json

import pytest

from promptopt.corpus import synthesize_corpus
from promptopt.schemas import ErrorSpan, SegmentRecord


def span_of(text, needle, severity="minor", side="target", category="accuracy/mistranslation"):
    """ErrorSpan covering the first occurrence of ``needle`` in ``text``."""
    start = text.index(needle)
    return ErrorSpan(
        start=start, end=start + len(needle), severity=severity,
        category=category, text=needle, side=side,
    )


@pytest.fixture
def make_record():
    """Factory returning a SegmentRecord with sensible defaults."""

    def _factory(**kwargs):
        defaults = {
            "lang_pair": "en-de",
            "system_id": "sysA",
            "doc_id": "doc1",
            "seg_id": 1,
            "source": "The council approved a new budget for public transport.",
            "target": "Der Rat hat einen neuen Haushalt für den Nahverkehr beschlossen.",
            "human_score": 0.0,
        }
        defaults.update(kwargs)
        return SegmentRecord(**defaults)

    return _factory


@pytest.fixture
def two_minor_record(make_record):
    target = "Der Rat hat einen neuen Haushalt für den Nahverkehr beschlossen."
    return make_record(
        target=target,
        spans=[
            span_of(target, "Rat", category="fluency/grammar"),
            span_of(target, "Nahverkehr", category="terminology/inappropriate for context"),
        ],
        human_score=-2.0,
    )


@pytest.fixture
def small_corpus():
    return synthesize_corpus(24, seed=3)


@pytest.fixture
def write_config(tmp_path):
    """Factory writing a run document and returning its path."""

    def _factory(**sections):
        payload = {
            "out_dir": str(tmp_path / "out"),
            "judge": {"backend": "synthetic", "cache_dir": str(tmp_path / "cache")},
        }
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(payload.get(key), dict):
                payload[key].update(value)
            else:
                payload[key] = value
        path = tmp_path / "run.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _factory
