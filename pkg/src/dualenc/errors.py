"""Exception types shared across the package."""


class DualEncError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DualEncError):
    pass


class DtypeError(DualEncError):
    pass


class ContractError(DualEncError):
    pass


class TooShortError(DualEncError):
    pass


class NoSignalError(DualEncError):
    pass


class RangeError(DualEncError):
    pass


class ConfigError(DualEncError):
    pass


class NumericalError(DualEncError):
    pass


class AlignmentError(DualEncError):
    pass


class ManifestError(DualEncError):
    pass


class VocabError(DualEncError):
    pass


class InputError(DualEncError):
    pass


class DivergenceError(DualEncError):
    pass
