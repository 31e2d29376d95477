"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (bad model, bad
parameters, violated preconditions) and :class:`NumericError` (a
computation that did not converge or could not certify its accuracy).
The command-line front end maps them to different exit codes.
"""


class QCrystalError(Exception):
    """Base class for all package errors."""


class InputError(QCrystalError, ValueError):
    """Invalid input or violated precondition."""


class ModelError(InputError):
    """A model specification is malformed or inadmissible."""


class PreconditionError(InputError):
    """An operation was called outside its domain of validity."""


class InstanceTooLarge(InputError):
    """An exact computation would exceed the enumeration budget."""


class MissingObservableError(InputError, KeyError):
    """An estimator needs an observable that was not recorded."""

    def __str__(self):  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class NumericError(QCrystalError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class DivergentSumError(NumericError):
    """A lattice sum does not converge for the requested weights."""


class TruncationError(NumericError):
    """A truncated sum or grid could not be certified."""


class ConvergenceError(NumericError):
    """An iterative solver or root finder failed."""


class SamplerDiagnosticError(NumericError):
    """Monte Carlo diagnostics (acceptance rate) out of range."""
