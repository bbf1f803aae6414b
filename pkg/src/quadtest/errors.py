"""Exception hierarchy.

Errors are split into two families so that the command-line runner can map
them to exit codes: problems with the caller's input (``ValidationError``) and
problems that arise while computing (``ComputeError``).
"""


class QuadTestError(Exception):
    """Base class for all package errors."""


class ValidationError(QuadTestError, ValueError):
    """Invalid input, configuration or precondition."""


class ComputeError(QuadTestError, RuntimeError):
    """Numerical failure or an unavailable computation."""


# core
class ConstantInput(ComputeError):
    pass


class NegativeCount(ValidationError):
    pass


class NonPositiveDispersion(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# graph
class DuplicatePoints(ValidationError):
    pass


class KTooLarge(ValidationError):
    pass


class CyclicTree(ValidationError):
    pass


class IsolatedNode(ValidationError):
    pass


class NoConvergence(ComputeError):
    pass


# kernel
class BackendMismatch(ValidationError):
    pass


class UnsupportedNu(ValidationError):
    pass


class BadRho(ValidationError):
    pass


class AsymmetricProfile(ValidationError):
    pass


class SolverDivergence(ComputeError):
    pass


class ImaginaryResidual(ComputeError):
    pass


class ExactUnavailable(ComputeError):
    pass


# spectra
class TooLarge(ComputeError):
    pass


class NotCentered(ValidationError):
    pass


# qtest / rtest
class ZeroVariance(ComputeError):
    pass


class NonPositiveTrace(ValidationError):
    pass


class EmptySpectrum(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# sim
class BadSpec(ValidationError):
    pass


class BadParams(ValidationError):
    pass


# io
class ParseError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class UnknownLocation(ValidationError):
    pass
