"""Exception types shared across the package.

Every error carries a short machine-readable ``kind`` string so the CLI can
emit structured error reports.
"""


class CcnnBootError(Exception):
    kind = "error"


class MalformedMagicError(CcnnBootError):
    kind = "malformed-magic"


class CountMismatchError(CcnnBootError):
    kind = "count-mismatch"


class TruncatedFileError(CcnnBootError):
    kind = "truncated-file"


class BadHeaderError(CcnnBootError):
    kind = "bad-header"


class EmptyDatasetError(CcnnBootError):
    kind = "empty-dataset"


class RejectionCapError(CcnnBootError):
    kind = "rejection-cap"


class MisalignedStrideError(CcnnBootError):
    kind = "misaligned-stride"


class ShapeMismatchError(CcnnBootError):
    kind = "shape-mismatch"


class NonFiniteInputError(CcnnBootError):
    kind = "non-finite-input"


class NonpositiveMuError(CcnnBootError):
    kind = "nonpositive-mu"


class NonpositiveRadiusError(CcnnBootError):
    kind = "nonpositive-radius"


class BadLabelError(CcnnBootError):
    kind = "bad-label"


class EmptyBatchError(CcnnBootError):
    kind = "empty-batch"


class NonFiniteObjectiveError(CcnnBootError):
    kind = "non-finite-objective"


class InsufficientAnchorsError(CcnnBootError):
    kind = "insufficient-anchors"


class RankDeficientError(CcnnBootError):
    kind = "rank-deficient"


class BadAlphaError(CcnnBootError):
    kind = "bad-alpha"


class SizeMismatchError(CcnnBootError):
    kind = "size-mismatch"


class NoConvLayerError(CcnnBootError):
    kind = "no-conv-layer"


class NonpositiveSigmaError(CcnnBootError):
    kind = "nonpositive-sigma"


class CalibrationFailedError(CcnnBootError):
    kind = "calibration-failed"


class InsufficientRunsError(CcnnBootError):
    kind = "insufficient-runs"


class ConfigError(CcnnBootError):
    """Raised for invalid or incomplete experiment configs."""

    kind = "config-error"

    def __init__(self, message, kind=None):
        super().__init__(message)
        if kind is not None:
            self.kind = kind
