"""Exception hierarchy shared by all mhs modules."""


class MhsError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(MhsError):
    """Input file is not syntactically valid (JSON, JSONL, schema)."""


class ValidationError(MhsError):
    """Parsed value violates a domain invariant."""


class InsufficientData(MhsError):
    """Not enough samples of each class for the requested split."""


class UnknownId(MhsError):
    """Requested id is not present in a file-backed embedding store."""


class DimensionMismatch(MhsError):
    """Embedding width differs from what the consumer was configured for."""


class BadMagic(MhsError):
    """File does not start with the expected format magic."""


class VersionMismatch(MhsError):
    """Container version is not supported by this reader."""


class CorruptRecord(MhsError):
    """Binary container framing is violated (truncation, bad lengths)."""


class ShapeError(MhsError):
    """Tensor shape inconsistent with the model configuration."""


class ZeroVector(MhsError):
    """Cosine similarity requested on a (near-)zero feature vector in strict mode."""


class MissingTrace(MhsError):
    """Backward pass invoked on a trace without retained intermediates."""


class CatalogMismatch(MhsError):
    """Model parameters were built for a different symptom catalog."""


class LengthMismatch(MhsError):
    """Paired prediction/truth sequences differ in length."""


class SingleClass(MhsError):
    """Metric requires both classes to be present."""


class EmptyClass(MhsError):
    """Per-class aggregation requested but one class has no samples."""


class NoTruePositives(MhsError):
    """Threshold calibration needs at least one true-positive sample."""
