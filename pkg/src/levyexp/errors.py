"""Exception hierarchy shared by all modules."""


class LevyError(Exception):
    """Base class for errors raised by levyexp."""


class DomainError(LevyError, ValueError):
    """A parameter lies outside the domain where an exponent is finite or smooth."""


class QuadratureError(LevyError, ArithmeticError):
    """Adaptive quadrature did not reach the requested absolute tolerance."""


class UnsupportedOperation(LevyError, NotImplementedError):
    """The requested operation is not available for this jump family or triplet."""


class RegimeMismatch(LevyError, ValueError):
    """A triplet does not satisfy the sign pattern an estimator requires."""


class InfiniteFunctional(LevyError, ValueError):
    """The exponential functional over an infinite horizon diverges almost surely."""


class FitError(LevyError, ValueError):
    """Too few usable points remain for a decay fit."""


class ConfigError(LevyError, ValueError):
    """A configuration text failed validation.

    ``diagnostics`` holds every violation found, not only the first one.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
