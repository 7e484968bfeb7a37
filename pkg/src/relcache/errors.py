"""Exception hierarchy shared by every relcache module."""


class RelCacheError(Exception):
    """Base class for all relcache failures."""


class ZeroReference(RelCacheError):
    """Relative error requested against an all-zero reference feature."""


class InsufficientHistory(RelCacheError):
    """Not enough cached samples for the requested prediction."""


class NonUniformSpacing(RelCacheError):
    """Finite differences requested over unevenly spaced samples."""


class ShapeMismatch(RelCacheError):
    pass


class InvalidConfig(RelCacheError):
    pass


class InsufficientData(RelCacheError):
    pass


class UndefinedRatio(RelCacheError):
    """An input-change norm of zero makes the output/input ratio undefined."""


class UndefinedDirection(RelCacheError):
    pass


class SingularFit(RelCacheError):
    pass


class FormatError(RelCacheError):
    """Malformed trace or config file."""


class BisectionFailed(RelCacheError):
    pass
