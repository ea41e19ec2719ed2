"""Exception hierarchy shared by every module of the package."""


class NilheatError(Exception):
    """Base class for all errors raised by :mod:`nilheat`."""


class UnsupportedModel(NilheatError):
    pass


class GridIncompatible(NilheatError):
    pass


class IndexOutOfRange(NilheatError, IndexError):
    pass


class NonFiniteValue(NilheatError, ValueError):
    pass


class NotPositive(NilheatError, ValueError):
    pass


class NotWrapConsistent(NilheatError):
    pass


class ShapeMismatch(NilheatError, ValueError):
    pass


class UTermAtN1(NilheatError):
    """The U torsion component was supplied for a seven-dimensional qc model,
    where it vanishes identically and the corresponding term is dropped."""


class PositivityLost(NilheatError):
    pass


class StabilityViolated(NilheatError):
    pass


class InsufficientSamples(NilheatError):
    pass


class ConfigInvalid(NilheatError, ValueError):
    pass
