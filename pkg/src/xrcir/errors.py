"""Exception hierarchy shared by every stage of the retrieval pipeline."""

from __future__ import annotations

from typing import Mapping


class XRError(Exception):
    """Base class for all errors raised by xrcir."""


class ConfigError(XRError, ValueError):
    pass


class InputError(XRError, ValueError):
    pass


class BackendError(XRError):
    """A model backend failed terminally (retries exhausted or non-retryable)."""


class TransientBackendError(BackendError):
    """Retryable backend failure: 5xx, timeouts, connection resets."""


class EmptyResponse(BackendError):
    pass


class MockScriptError(BackendError, KeyError):
    """A mock backend received a request its script does not cover."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class CatalogBuildError(BackendError):
    def __init__(self, failures: Mapping[str, str]):
        self.failures = dict(failures)
        super().__init__(
            f"catalog build failed for {len(self.failures)} item(s): "
            + ", ".join(sorted(self.failures))
        )


class ParseError(XRError, ValueError):
    pass


class SchemaError(ParseError):
    pass


class UnparsableVerdict(ParseError):
    pass


class DimensionMismatch(XRError, ValueError):
    pass


class LengthMismatch(XRError, ValueError):
    pass


class StateError(XRError, RuntimeError):
    pass


class IoError(XRError, OSError):
    pass


class FormatError(XRError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ReferentialError(FormatError):
    pass


class MissingFile(XRError, FileNotFoundError):
    pass


class SchemaDrift(XRError, ValueError):
    pass


class EmptyRanking(XRError, ValueError):
    pass


class EmptySubsetRanking(EmptyRanking):
    pass


class DegenerateInput(XRError, ValueError):
    pass


class TooFewRuns(XRError, ValueError):
    pass


class UnpairedRuns(XRError, ValueError):
    pass


class StageError(XRError):
    """A pipeline stage failed; ``stage`` names where."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")


class BenchmarkAborted(XRError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
