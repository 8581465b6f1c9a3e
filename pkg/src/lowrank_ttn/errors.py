"""Exception types raised across the package."""


class TTNError(Exception):
    """Base class for all package errors."""


class ShapeError(TTNError, ValueError):
    pass


class CapacityError(TTNError):
    pass


class ConfigError(TTNError, ValueError):
    pass


class DomainError(TTNError, ValueError):
    pass


class UsageError(TTNError):
    pass


class DegenerateOutputError(TTNError, ArithmeticError):
    """The decision vector has (numerically) zero norm.

    ``sample`` holds the batch position of the offending image when known.
    """

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class DivergenceError(TTNError, ArithmeticError):
    pass


class ParseError(TTNError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(TTNError):
    pass
