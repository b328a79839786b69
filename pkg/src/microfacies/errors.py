"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ValidationError(ValueError):
    """Input data (manifest, config, split) failed validation."""


class StateError(RuntimeError):
    """An object was used in a state that does not permit the call."""


class PreconditionError(RuntimeError):
    """A global precondition (e.g. numeric precision mode) is not met."""


class DecodeError(ValueError):
    """Raster bytes could not be decoded."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FormatError(ValueError):
    """Checkpoint file is malformed or has an unsupported version."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""
