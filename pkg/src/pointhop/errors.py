"""Exception types raised across the package."""


class PointHopError(Exception):
    """Base class; ``kind`` is the tag used in CLI diagnostics."""

    kind = "error"


class InvalidInput(PointHopError, ValueError):
    kind = "invalid_input"


class InsufficientData(PointHopError, ValueError):
    kind = "insufficient_data"


class InvalidState(PointHopError, RuntimeError):
    kind = "invalid_state"


class CorruptModel(PointHopError, IOError):
    kind = "corrupt_model"
