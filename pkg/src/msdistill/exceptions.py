"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class ParameterError(ValueError):
    """A scalar hyperparameter or index is outside its valid range."""


class NumericalError(FloatingPointError):
    """Non-finite values showed up in logits, losses or gradients."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss or gradient.

    ``iteration`` is the (1-based) step at which it was detected.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedTaskError(ValueError):
    """Report requested for a task it is not defined on (e.g. C != 2)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key."""
