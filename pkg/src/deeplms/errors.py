"""Exception types shared by the filters, the signal tools and the harness."""


class AdaptiveError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AdaptiveError, ValueError):
    """An argument is outside the domain of the operation (shape, range, finiteness)."""


class NumericalError(AdaptiveError, ArithmeticError):
    """A matrix lost the structure an algorithm relies on (definiteness, conditioning)."""


class DivergenceError(AdaptiveError, ArithmeticError):
    """An adaptive filter produced a non-finite weight, prediction or error.

    ``state`` holds the last state whose entries were all finite and ``step``
    the time index at which the blow-up was detected (``None`` when raised
    outside a stepping loop).
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step

    def __str__(self):
        msg = super().__str__()
        if self.step is not None:
            return f"{msg} (step {self.step})"
        return msg


class ConfigError(AdaptiveError, ValueError):
    """An experiment configuration is malformed or references unknown keys."""
