"""Exception types shared across the package."""


class StitchkitError(Exception):
    """Base class for every error raised by this library."""


class DimensionError(StitchkitError):
    """Operand shapes do not compose."""


class NumericError(StitchkitError):
    """Non-finite values, or a computation that diverged."""


class ParseError(StitchkitError):
    """A serialized file is malformed. Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(StitchkitError):
    """Invalid configuration, flags, or incompatible run options."""


class UnsupportedJointError(StitchkitError):
    """Fragment pairing not covered by the stitching rules."""


class DegenerateActivationsError(StitchkitError):
    """Activations constant across samples; similarity is undefined."""
