"""Exception types shared across the package."""


class MlpFusionError(Exception):
    """Base class; ``code`` is the machine-readable category printed by the CLI."""

    code = "error"


class InvalidArgument(MlpFusionError, ValueError):
    code = "invalid-argument"


class UnsupportedActivation(MlpFusionError, ValueError):
    code = "unsupported-activation"


class PreconditionViolation(MlpFusionError, ValueError):
    code = "precondition-violation"


class NumericFailure(MlpFusionError, ArithmeticError):
    """Raised when an iterative routine diverges or fails to converge.

    ``step`` holds the iteration/step index at which the failure was detected.
    """

    code = "numeric-failure"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TensorIOError(MlpFusionError, OSError):
    code = "io-error"

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
