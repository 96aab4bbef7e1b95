"""Exception types raised across the package."""


class SparseIdError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SparseIdError, ValueError):
    pass


class NumericError(SparseIdError, ArithmeticError):
    pass


class AuthorizationError(SparseIdError, PermissionError):
    pass


class FormatError(SparseIdError, ValueError):
    """Malformed asset file (bad magic, version, truncation or symbol)."""


class ProtocolError(SparseIdError):
    """Malformed or rejected wire frame; ``code`` is the ERROR frame code."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
