"""Exception hierarchy for the skycap package."""

from __future__ import annotations


class SkycapError(Exception):
    """Base class for all errors raised by this package."""


class DatastoreError(SkycapError):
    """A datastore file failed validation at load time."""


class MalformedHeaderError(DatastoreError):
    """Vector file header is corrupt (bad magic, version, or dtype)."""


class DimensionMismatchError(DatastoreError):
    """Embedding dimensions disagree between files or with a query."""


class DanglingRowError(DatastoreError):
    """A metadata record references a vector row that does not exist."""


class DuplicateIdError(DatastoreError):
    """A caption or image id occurs more than once."""


class EmptyDatastoreError(DatastoreError):
    """The datastore contains no caption records."""


class DegenerateEmbeddingError(SkycapError):
    """An embedding has zero norm and cannot be used for cosine similarity."""


class UnknownIdError(SkycapError):
    """A caption or image id is not present in the datastore."""


class UnsupportedLanguageError(SkycapError):
    """A language code outside the supported set was requested."""


class InsufficientCandidatesError(SkycapError):
    """The candidate pool is too small for the requested selection."""


class ConvergenceError(SkycapError):
    """Iterative ranking failed to converge within the iteration budget."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PoolMappingError(SkycapError):
    """A pool element has no corresponding graph node."""


class BackendError(SkycapError):
    """A generation or embedding backend failed."""


class TransportError(BackendError):
    """Network-level failure talking to a backend (retryable)."""


class ProtocolError(BackendError):
    """Backend replied, but the response violates the wire contract."""
