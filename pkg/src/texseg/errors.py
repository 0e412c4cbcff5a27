"""Exception hierarchy and process exit codes."""


class TexsegError(Exception):
    """Base class for all texseg errors."""


class ShapeError(TexsegError):
    """Dimension mismatch; names the offending axis."""

    def __init__(self, axis: str, expected, actual):
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(f"axis '{axis}': expected {expected}, got {actual}")


class ConfigError(TexsegError):
    """Invalid configuration or argument value."""


class CheckpointError(TexsegError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class DataError(TexsegError):
    """Dataset, label-map, or image file problem."""


class NumericalError(TexsegError):
    """Non-finite values or numerical breakdown."""


# Exit codes used by the CLI: distinct classes of failure.
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
