"""Exception types raised across the package.

Every error carries a stable ``code`` (the class name) so the CLI can emit a
machine-readable error object without string matching.
"""


class ConfideError(ValueError):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class NegativeEntry(ConfideError):
    pass


class BadSum(ConfideError):
    pass


class WrongLength(ConfideError):
    pass


class ParseError(ConfideError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InconsistentK(ParseError):
    pass


class EmptySplit(ConfideError):
    pass


class AccuracyOutOfRange(ConfideError):
    pass


class NoSupervisedRows(ConfideError):
    pass


class DegenerateMode(ConfideError):
    pass


class SpOutOfRange(ConfideError):
    pass


class TooFewRows(ConfideError):
    pass


class NonFinite(ConfideError):
    pass


class MethodFieldMissing(ConfideError):
    pass


class LengthMismatch(ConfideError):
    pass


class OracleRequired(ConfideError):
    pass


class ConfigInvalid(ConfideError):
    pass


class SizeTooLarge(ConfideError):
    pass
