"""Exception hierarchy shared across the package.

Data errors map to CLI exit code 2, service errors to exit code 3.
"""


class EngageTraceError(Exception):
    """Base class for all package errors."""


class DataError(EngageTraceError):
    """Invalid or inconsistent input data."""


class DegenerateEvidenceError(DataError):
    """Conditioning event has numerically vanished probability mass."""


class MissingAnnotationError(DataError):
    """A view log references a (lecture, fragment) with no annotation."""


class DuplicateLogError(DataError):
    """The same view log record appears more than once."""


class OrderingError(DataError):
    """Event stream violates the per-learner ordering invariants."""


class SchemaVersionError(DataError):
    """A report or state file carries an unsupported schema version."""


class EnumerationBoundError(DataError):
    """Joint-state enumeration requested for too many skills."""


class ServiceError(EngageTraceError):
    """Problems talking to the external annotation service."""


class ServiceUnreachableError(ServiceError):
    """The annotation service could not be reached (retryable)."""


class MalformedResponseError(ServiceError):
    """The annotation service returned an unparseable payload."""
