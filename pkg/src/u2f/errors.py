class FormatError(ValueError):
    """Base class for malformed files."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass
