"""Exception hierarchy shared across the package."""

from __future__ import annotations


class NLSearchError(Exception):
    """Base class for every error raised by nlsearch."""


class ContractViolation(NLSearchError, ValueError):
    """A function was called outside its documented preconditions."""


class SchemaConfigError(NLSearchError):
    """A schema config document is malformed."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DuplicateFieldError(SchemaConfigError):
    """Two fields in one schema share a name."""


class EmptyQueryError(NLSearchError, ValueError):
    """A natural-language query was blank."""


class BackendUnavailable(NLSearchError):
    """The completion backend could not produce a response."""

    def __init__(self, message: str, *, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class AuthError(NLSearchError):
    """The completion backend rejected our credentials."""


class TranslationFailed(NLSearchError):
    """Every refinement attempt produced an invalid document."""

    def __init__(self, record):
        self.record = record
        last = record.attempts[-1].outcome.failure if record.attempts else None
        super().__init__(
            f"no valid document after {len(record.attempts)} attempt(s)"
            + (f"; last failure: {last}" if last else "")
        )


class CompileContractError(NLSearchError, ValueError):
    """compile() was handed a document that has not been scrubbed."""


class FilterSyntaxError(NLSearchError, ValueError):
    """A filter string does not follow the published grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class EmbeddingError(NLSearchError):
    """An embedding provider failed to embed a text."""


class DatasetError(NLSearchError):
    """A dataset file (or a split request) is invalid.

    ``problems`` holds one ``(line_number, message)`` pair per offending line;
    the line number is ``None`` for dataset-wide problems.
    """

    def __init__(self, problems: list[tuple[int | None, str]]):
        self.problems = list(problems)
        lines = [f"line {n}: {msg}" if n is not None else msg for n, msg in self.problems]
        super().__init__("; ".join(lines))
