"""Error hierarchy with actionable suggestions and CLI exit codes."""

from typing import Optional


class ExifForensicsError(Exception):
    """Base exception for exif-forensics with actionable suggestions."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        suggestion: Optional[str] = None,
        error_code: Optional[str] = None,
    ):
        self.message = message
        self.suggestion = suggestion
        self.error_code = error_code
        super().__init__(message)

    def to_dict(self) -> dict:
        """Convert error to a dictionary for JSON serialization."""
        result = {"error": self.message}
        if self.suggestion:
            result["suggestion"] = self.suggestion
        if self.error_code:
            result["error_code"] = self.error_code
        return result


class UsageError(ExifForensicsError):
    """Raised for invalid arguments or configuration values."""

    exit_code = 1

    def __init__(self, message: str, suggestion: Optional[str] = None):
        super().__init__(
            message=message,
            suggestion=suggestion or "Run `exif-forensics <verb> --help` for usage",
            error_code="USAGE",
        )


class DataError(ExifForensicsError):
    """Raised when input data cannot be used."""

    exit_code = 2

    def __init__(
        self,
        message: str,
        suggestion: Optional[str] = None,
        error_code: str = "DATA_ERROR",
    ):
        super().__init__(message=message, suggestion=suggestion, error_code=error_code)


class EmptyRecordError(DataError):
    """Raised when an EXIF record has no tags to serialize."""

    def __init__(self, source_id: str = ""):
        super().__init__(
            message=f"EXIF record {source_id!r} is empty; there is no text to embed",
            suggestion="Drop images without registry tags with passes_training_filter",
            error_code="EMPTY_RECORD",
        )


class UnknownTagError(DataError):
    """Raised when a tag name is not part of the registry."""

    def __init__(self, tag: str):
        super().__init__(
            message=f"Tag {tag!r} is not in the EXIF tag registry",
            suggestion="List the registry with load_registry().names",
            error_code="UNKNOWN_TAG",
        )


class QuantizerError(DataError):
    """Raised when a tag has no usable classes."""

    def __init__(self, tag: str, details: str):
        super().__init__(
            message=f"Cannot quantize tag {tag!r}: {details}",
            suggestion="Exclude this tag from the probe subset or use a larger corpus",
            error_code="QUANTIZER_UNUSABLE",
        )


class ImageTooSmallError(DataError):
    """Raised when an image cannot hold a patch of the requested side."""

    def __init__(self, height: int, width: int, side: int):
        super().__init__(
            message=f"Image of size {height}x{width} is smaller than patch side {side}",
            suggestion="Lower patch_side in the config or drop small images",
            error_code="IMAGE_TOO_SMALL",
        )


class ManifestError(DataError):
    """Raised when a manifest is missing, malformed or empty."""

    def __init__(self, message: str):
        super().__init__(
            message=message,
            suggestion="Rebuild the manifest with `exif-forensics build-corpus`",
            error_code="MANIFEST_INVALID",
        )


class CheckpointError(DataError):
    """Raised when a checkpoint is missing or was written by another format version."""

    def __init__(self, message: str):
        super().__init__(
            message=message,
            suggestion="Train a fresh checkpoint with `exif-forensics train`",
            error_code="CHECKPOINT_INVALID",
        )


class MetricUndefinedError(DataError):
    """Raised when a metric is undefined for the given ground truth."""

    def __init__(self, details: str):
        super().__init__(
            message=f"Metric undefined: {details}",
            suggestion="Localization metrics need both spliced and pristine pixels",
            error_code="METRIC_UNDEFINED",
        )


class NonFiniteInputError(DataError):
    """Raised when a similarity matrix contains NaN or infinite entries."""

    def __init__(self, what: str = "similarity matrix"):
        super().__init__(
            message=f"Non-finite entries in {what}",
            suggestion="Check the encoders for diverging weights; lower the learning rate",
            error_code="NON_FINITE",
        )


class NotNormalizedError(DataError):
    """Raised when embeddings are expected to be unit norm but are not."""

    def __init__(self, worst_norm: float):
        super().__init__(
            message=f"Embeddings must be unit norm (found norm {worst_norm:.6f})",
            suggestion="Pass encoder outputs directly; they are normalized by the model",
            error_code="NOT_NORMALIZED",
        )


class PreprocessingMismatchError(DataError):
    """Raised when feature sets extracted with different preprocessing are mixed."""

    def __init__(self, left: str, right: str):
        super().__init__(
            message=f"Cannot mix {left!r} and {right!r} features in one probe",
            suggestion="Extract all features with the same --preprocessing value",
            error_code="PREPROCESSING_MISMATCH",
        )


def get_error_suggestion(message: str) -> Optional[str]:
    """
    Parse low-level error messages and provide actionable suggestions.

    Args:
        message: The text of an exception raised by a third-party library

    Returns:
        Actionable suggestion string or None
    """
    lowered = message.lower()

    if "permission denied" in lowered:
        return "Check file permissions on the input and run directories"

    if "cannot identify image file" in lowered:
        return "The file is not a readable image; remove it or convert it to PNG/JPEG"

    if "no such file" in lowered or "not found" in lowered:
        return "Check the path; manifests store paths relative to the working directory"

    if "out of memory" in lowered:
        return "Lower batch_size or patch_side in the config"

    if "format_version" in lowered or "checkpoint" in lowered:
        return "The checkpoint was written by another version; retrain it"

    if "nan" in lowered or "inf" in lowered:
        return "Training diverged; lower the learning rate or raise the temperature"

    return None
