"""Typed failures raised across the pipeline.

Every deliberate error path raises a subclass of :class:`AdcriticError`, so
callers can catch the package's failures without swallowing bugs.
"""

from __future__ import annotations


class AdcriticError(Exception):
    """Base class for all errors this package raises on purpose."""


class SchemaError(AdcriticError):
    """A record or config object does not conform to its declared schema."""


class DuplicateImageId(SchemaError):
    """Two images inside one record share an id."""


class EmptyFeature(AdcriticError):
    """A feature string was empty after trimming."""


class EmptyText(AdcriticError):
    """An operation that requires non-empty text received none."""


class ParseError(AdcriticError):
    """A linearized structured-data line is malformed."""


class UnknownTemplate(AdcriticError):
    """No prompt template file exists for the requested template id."""


class MissingBinding(AdcriticError):
    """A template placeholder was left unbound at render time."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing binding: {name!r}")


class NoListFound(AdcriticError):
    """Model output contained no recognizable feature list."""


class UnparsableVerdict(AdcriticError):
    """Model output did not match the expected verdict grammar."""


class OverlapError(AdcriticError):
    """A feature appeared in two mutually exclusive output sections."""


class BackendUnavailable(AdcriticError):
    """The backend for a model role is unreachable or not configured."""


class BackendError(AdcriticError):
    """The backend answered with a non-success status."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"backend error {status}: {body[:200]}")


class CacheCorrupt(AdcriticError):
    """A cache entry exists but cannot be read back."""


class ProtocolError(AdcriticError):
    """A critic wire message violates the protocol schema."""


class EmptyGeneration(AdcriticError):
    """The generator returned empty text even after a retry."""


class ExtractionFailed(AdcriticError):
    """Feature extraction failed on every sentence of a text."""

    def __init__(self, causes: list[Exception]):
        self.causes = causes
        super().__init__(f"extraction failed on all {len(causes)} sentences")


class RationaleTooLong(AdcriticError):
    """A rationale generation produced more than one sentence."""


class EmptyCorpus(AdcriticError):
    """A corpus-level metric received no candidate/reference pairs."""


class EmptyInput(AdcriticError):
    """An aggregate received an empty input collection."""


class ConfigError(AdcriticError):
    """The pipeline configuration file is missing or invalid."""


class BuildError(AdcriticError):
    """Training-set construction failed on too many records."""
