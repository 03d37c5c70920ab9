"""Exception hierarchy.

Every error raised by the library derives from :class:`PrimodError`. The CLI
maps them onto exit codes: validation problems give 1 and configuration
problems give 3. Exit code 2 is reserved for an analysis run in which some
flows failed.
"""

from __future__ import annotations


class PrimodError(Exception):
    """Base class for all library errors."""


# --------------------------------------------------------------------------- #
# input validation (exit code 1)
# --------------------------------------------------------------------------- #
class ValidationError(PrimodError):
    """Input data violates a documented schema or invariant.

    ``issues`` holds every problem found, not just the first one.
    """

    def __init__(self, message: str, issues: list[str] | None = None):
        self.issues = list(issues) if issues else [message]
        super().__init__(message)


class MalformedFile(ValidationError):
    pass


class MissingField(ValidationError):
    pass


class DuplicateThreatId(ValidationError):
    pass


class MissingCategory(ValidationError):
    pass


class DuplicateNodeId(ValidationError):
    pass


class DanglingReference(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class UnknownPlaceholder(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown placeholder {{{name}}}")


class MissingContextPlaceholder(ValidationError):
    pass


class UnknownCategory(ValidationError):
    pass


class EmptyAfterNormalization(ValidationError):
    pass


# --------------------------------------------------------------------------- #
# configuration / environment (exit code 3)
# --------------------------------------------------------------------------- #
class ConfigError(PrimodError):
    pass


class FingerprintMismatch(ConfigError):
    """An index or run directory was produced under a different configuration."""


class ProviderUnavailable(ConfigError):
    pass


# --------------------------------------------------------------------------- #
# retrieval
# --------------------------------------------------------------------------- #
class EmptyText(PrimodError):
    pass


class DimensionMismatch(PrimodError):
    pass


class EmptyIndex(PrimodError):
    pass


# --------------------------------------------------------------------------- #
# LLM transport and result parsing
# --------------------------------------------------------------------------- #
class EndpointError(PrimodError):
    def __init__(self, message: str, status: int | None = None, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(message)


class EndpointTimeout(EndpointError):
    pass


class EmptyCompletion(EndpointError):
    pass


class ResultError(PrimodError):
    """The model reply could not be turned into an AnalysisResult."""


class NotJson(ResultError):
    pass


class SchemaViolation(ResultError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class DfIdMismatch(ResultError):
    pass


class UnknownCategoryInResult(ResultError, UnknownCategory):
    pass


class UnknownSource(ResultError):
    pass


class ExhaustedRepairs(PrimodError):
    def __init__(self, last_error: Exception, last_raw: str, attempts: int):
        self.last_error = last_error
        self.last_raw = last_raw
        self.attempts = attempts
        super().__init__(f"no valid reply after {attempts} attempts: {last_error}")


# --------------------------------------------------------------------------- #
# metrics
# --------------------------------------------------------------------------- #
class MetricsError(PrimodError):
    pass


class UnknownDf(MetricsError):
    pass


class DfSetMismatch(MetricsError):
    pass


class EmptyMatrix(MetricsError):
    pass


class OutOfRange(MetricsError):
    pass
