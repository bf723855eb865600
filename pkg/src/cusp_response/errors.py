"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model or experiment parameters."""


class DomainError(ValueError):
    """A point lies outside the interval the map or operator is defined on."""


class SingularityError(ValueError):
    """A derivative was requested exactly at the cusp."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    The last measured residual is kept on the exception so callers can
    record it instead of aborting a whole sweep.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
