"""Exception hierarchy.

Every failure raised by the library derives from :class:`SignProtoError`.
The three families map onto the CLI exit codes (config 2, data 3, numeric 4).
"""


class SignProtoError(Exception):
    exit_code = 1


class ConfigError(SignProtoError, ValueError):
    exit_code = 2


class DataError(SignProtoError, ValueError):
    exit_code = 3


class NumericError(SignProtoError, ArithmeticError):
    exit_code = 4


class SampleFormatError(DataError):
    """Base class for malformed sample files."""


class BadMagicError(SampleFormatError):
    pass


class VersionMismatchError(SampleFormatError):
    pass


class TruncatedPayloadError(SampleFormatError):
    pass
