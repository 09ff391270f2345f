"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to, so the
exit-code table lives in one place.
"""


class ECTMError(Exception):
    exit_code = 1


class SchemaError(ECTMError, ValueError):
    """Input does not match the expected schema or violates a data invariant."""

    exit_code = 2


class EmptyCycleError(SchemaError):
    pass


class InvalidIntervalError(SchemaError):
    pass


class InvalidCapacityError(SchemaError):
    pass


class NonUniformGridError(SchemaError):
    pass


class IdentifiabilityError(SchemaError):
    pass


class NonInvertibleError(SchemaError):
    """Linear parameters do not map back to a physical parameter set."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class DataIOError(ECTMError, OSError):
    exit_code = 3


class IllConditionedError(ECTMError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, columns=(), condition_number=float("inf")):
        super().__init__(message)
        self.columns = tuple(columns)
        self.condition_number = condition_number


class ModelMismatchError(ECTMError, ValueError):
    """Parameter vector and data disagree in shape or sampling interval."""

    exit_code = 5


class NonConvergenceError(ECTMError, ArithmeticError):
    exit_code = 6

    def __init__(self, message, theta=None, kkt_residual=float("nan")):
        super().__init__(message)
        self.theta = theta
        self.kkt_residual = kkt_residual
