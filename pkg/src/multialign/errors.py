"""Exception types shared across the package."""


class MultialignError(Exception):
    """Base class for all package-specific errors."""


class FormatError(MultialignError):
    """A file does not conform to its expected text/binary format."""


class ConfigError(MultialignError):
    """A run configuration is malformed or fails validation."""


class NumericsError(MultialignError):
    """A numerical routine diverged or left its supported regime."""


class PipelineError(MultialignError):
    """A pipeline stage failed; carries the stage and (if any) edge name."""

    def __init__(self, message, stage=None, edge=None):
        super().__init__(message)
        self.stage = stage
        self.edge = edge
