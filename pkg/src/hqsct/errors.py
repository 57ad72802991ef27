"""Exception hierarchy shared by every module of the toolkit."""


class HQSCTError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpecError(HQSCTError, ValueError):
    """A parameter set violates its documented invariants."""


class CoverageError(InvalidSpecError):
    """The reconstruction grid is not fully inside the X-ray cone."""


class DimensionError(HQSCTError, ValueError):
    """Array or container shapes do not agree with each other or the geometry."""


class NumericError(HQSCTError, FloatingPointError):
    """Non-finite values were detected in inputs or iterates."""


class FormatError(HQSCTError):
    """A file does not follow the expected binary layout."""


class TruncationError(FormatError):
    """A file payload is shorter than its header announces."""

    def __init__(self, path, expected, actual):
        self.path = str(path)
        self.expected = int(expected)
        self.actual = int(actual)
        super().__init__(
            f"{self.path}: truncated payload, expected {self.expected} bytes, got {self.actual}"
        )
