"""Exception hierarchy shared across the package."""


class PctError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(PctError):
    """Malformed, truncated or unsupported image file."""


class AnnotationError(PctError):
    """Malformed annotation or schedule file (carries the line number)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelFormatError(PctError):
    """Bad magic, version, truncation or invalid field in a model blob."""


class TrainingError(PctError):
    """Training cannot proceed (bad configuration or degenerate data)."""

    def __init__(self, message, stage=None):
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)
        self.stage = stage


class WeightCollapseError(TrainingError):
    """All boosting weights underflowed to zero."""


class MiningBudgetError(TrainingError):
    """Negative mining ran out of draws before collecting enough windows."""
