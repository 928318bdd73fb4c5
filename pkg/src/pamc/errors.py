"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's preconditions."""


class NumericalFailure(RuntimeError):
    """Raised when an iterative routine produces non-finite values.

    ``trace`` carries whatever diagnostic history was collected before the
    failure (objective values for the solver, step index for the loop).
    """

    def __init__(self, message, trace=None, step=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.step = step
