"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class ParameterError(ValueError):
    """A numeric argument lies outside its allowed range."""


class NumericError(ArithmeticError):
    """A computation produced a NaN or Inf where finite values are required."""


class ConfigError(ValueError):
    """A configuration is inconsistent, incomplete, or names unknown fields."""


class FormatError(ValueError):
    """A serialized artifact is malformed.

    ``offset`` is the byte position at which the problem was detected,
    when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
