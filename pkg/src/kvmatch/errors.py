class KVMatchError(Exception):
    """Base class for all errors raised by kvmatch."""


class InvalidSeries(KVMatchError, ValueError):
    pass


class ZeroVariance(KVMatchError, ValueError):
    pass


class LengthMismatch(KVMatchError, ValueError):
    pass


class BandTooWide(KVMatchError, ValueError):
    pass


class SeriesTooShort(KVMatchError, ValueError):
    pass


class QueryTooShort(KVMatchError, ValueError):
    pass


class CorruptIndex(KVMatchError):
    pass


class TooLarge(KVMatchError, ValueError):
    pass
