"""Exception hierarchy for promptopt.

Batch stages never let these escape per record: they are caught, turned into
quarantine entries and counted. Only configuration problems abort a run.
"""

from __future__ import annotations


class PromptOptError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PromptOptError):
    pass


# ── Corpus ───────────────────────────────────────────────────────────────


class CorpusError(PromptOptError, ValueError):
    def __init__(self, row: int, message: str) -> None:
        super().__init__(f"row {row}: {message}")
        self.row = row


class MalformedRow(CorpusError):
    pass


class SpanOutOfBounds(CorpusError):
    pass


class EncodingError(CorpusError):
    pass


# ── Compression / prompts ────────────────────────────────────────────────


class EmptyText(PromptOptError, ValueError):
    pass


class GrammarError(PromptOptError, ValueError):
    def __init__(self, offset: int, message: str) -> None:
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class MissingField(PromptOptError, KeyError):
    pass


class VocabError(PromptOptError, ValueError):
    pass


# ── Judge ────────────────────────────────────────────────────────────────


class JudgeError(PromptOptError):
    pass


class AuthError(JudgeError):
    pass


class BadRequest(JudgeError):
    pass


class ExhaustedRetries(JudgeError):
    pass


class BackendUnavailable(JudgeError):
    pass


# ── Preferences / ORPO / stats ───────────────────────────────────────────


class MissingReferenceRate(PromptOptError, KeyError):
    pass


class DomainError(PromptOptError, ValueError):
    pass


class DegenerateInput(PromptOptError, ValueError):
    pass


class TooFewSystems(PromptOptError, ValueError):
    pass


class MissingBaseline(PromptOptError):
    pass
