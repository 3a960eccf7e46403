"""Exception hierarchy shared by the library and the command line."""


class BLSError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class DataError(BLSError, ValueError):
    """Malformed, missing or degenerate input data."""

    exit_code = 2


class NumericalDegeneracyError(BLSError, ArithmeticError):
    """A factorisation or update produced a non-finite or invalid quantity."""

    exit_code = 3

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
