"""Exception types shared across the package."""
from __future__ import annotations

from typing import Iterable


class GolferError(Exception):
    """Base class for every error raised by this package."""


class ParseError(GolferError):
    """An input file line could not be parsed."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ValidationError(GolferError):
    """An input violated a structural invariant."""

    def __init__(self, message: str, *, doc_id: str | None = None, rule: str | None = None):
        self.doc_id = doc_id
        self.rule = rule
        parts = []
        if doc_id is not None:
            parts.append(f"doc {doc_id!r}")
        if rule is not None:
            parts.append(f"rule {rule!r}")
        suffix = f" ({', '.join(parts)})" if parts else ""
        super().__init__(message + suffix)


class CompletenessError(GolferError):
    """A required set of records is incomplete (e.g. missing NLI pairs)."""

    def __init__(self, message: str, *, missing: Iterable[tuple] = ()):
        self.missing = tuple(missing)
        super().__init__(message)


class MissingEmbeddingError(GolferError):
    """Batch-file embedding lookup missed; carries the unresolved request ids."""

    def __init__(self, message: str, *, missing_ids: Iterable[str] = ()):
        self.missing_ids = tuple(missing_ids)
        super().__init__(message)


class ProviderError(GolferError):
    """An embedding backend failed to produce vectors."""


class PipelineError(GolferError):
    """A pipeline stage failed; names the stage so diagnostics stay actionable."""

    def __init__(self, message: str, *, stage: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
