"""Exception types raised across the package."""


class TactflError(Exception):
    """Base class for all package errors."""


class DimensionError(TactflError, ValueError):
    """Array shapes do not line up."""


class ParameterError(TactflError, ValueError):
    """A hyper-parameter or rate is outside its valid range."""


class InputError(TactflError, ValueError):
    """Data handed to an operation cannot be processed."""


class FormatError(TactflError, ValueError):
    """A file or parameter manifest is malformed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(TactflError, ArithmeticError):
    """A computation produced a non-finite value."""


class ProtocolError(TactflError, RuntimeError):
    """A federated-protocol contract was broken (e.g. a frozen block moved)."""
