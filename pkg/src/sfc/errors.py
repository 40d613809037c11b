"""Exception types shared across the package."""


class SfcError(Exception):
    """Base class for all package errors."""


class DimensionError(SfcError, ValueError):
    """Array shapes or lengths do not match what an operation expects."""


class ArgumentError(SfcError, ValueError):
    """An argument violates an operation's precondition."""


class StateError(SfcError, RuntimeError):
    """An operation was called in an invalid state (e.g. backward without forward)."""


class NumericError(SfcError, ArithmeticError):
    """A non-finite value was produced or supplied."""


class ParseError(SfcError, ValueError):
    """A file could not be parsed; the message names the offending line."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ConfigError(SfcError, ValueError):
    """A configuration key or value is invalid."""
