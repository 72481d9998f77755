"""Exception hierarchy shared by every fbmatch module."""


class FBMatchError(Exception):
    """Base class for all library errors."""


class FormatError(FBMatchError, ValueError):
    """A tensor or mask file does not conform to its container format."""


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class IoFailure(FBMatchError, OSError):
    pass


class DimensionMismatch(FBMatchError, ValueError):
    pass


class ZeroFactor(FBMatchError, ValueError):
    pass


class EmptyWindowSet(FBMatchError, ValueError):
    pass


class InputTooLarge(FBMatchError, ValueError):
    pass


class MaxRetriesExceeded(FBMatchError, RuntimeError):
    pass


class WindowTooLarge(FBMatchError, ValueError):
    pass


class VideoTooShort(FBMatchError, ValueError):
    pass


class EmptyInput(FBMatchError, ValueError):
    pass


class BadRatio(FBMatchError, ValueError):
    pass
