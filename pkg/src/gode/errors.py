"""Exception types raised across the package."""


class GodeError(Exception):
    """Base class for all package errors."""


class InputError(GodeError, ValueError):
    """Bad user-supplied input (maps to CLI exit code 2)."""


class EmptyInput(InputError):
    pass


class MalformedLine(InputError):
    def __init__(self, path, lineno, line):
        super().__init__(f"{path}:{lineno}: malformed line {line!r}")
        self.lineno = lineno


class EmptyResult(InputError):
    """k-core filtering removed every interaction."""


class CheckpointError(InputError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class Truncated(CheckpointError):
    def __init__(self, path, offset, expected):
        super().__init__(f"{path}: truncated at byte {offset} (expected {expected} bytes)")
        self.offset = offset
        self.expected = expected


class DimensionMismatch(GodeError, ValueError):
    pass


class IsolatedNode(GodeError, ValueError):
    pass


class ZeroNormRow(GodeError, FloatingPointError):
    def __init__(self, side, row):
        super().__init__(f"zero-norm {side} embedding row {row}")
        self.side = side
        self.row = row


class NonFinite(GodeError, FloatingPointError):
    pass


class NoTraining(InputError):
    pass
