"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3.
"""


class PriceModelError(Exception):
    """Base class for every error raised by mfgprice."""


class ConfigError(PriceModelError, ValueError):
    """Invalid parameters or configuration.

    ``field`` holds the dotted path of the offending entry when known
    (for example ``params.c``).
    """

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DomainError(PriceModelError, ValueError):
    """A formula was evaluated outside the region where it is valid."""


class CapacityError(PriceModelError, ValueError):
    """A problem is too large for the requested (dense or full-tree) method."""


class SingularityError(PriceModelError, ArithmeticError):
    """A denominator such as ``a2_4 + 1`` came too close to zero."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class BlowUpError(PriceModelError, ArithmeticError):
    """A numerical integration produced non-finite values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConvergenceError(PriceModelError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EstimationError(PriceModelError, ValueError):
    """A statistical fit is undefined for the supplied sample."""


class RankDeficiencyError(EstimationError):
    """A least-squares design matrix does not have full column rank."""
