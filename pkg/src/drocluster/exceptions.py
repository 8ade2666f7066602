"""Exception hierarchy.

Errors split into two families so that callers (and the CLI exit codes) can
tell bad input apart from a numerical breakdown.
"""


class DroClusterError(Exception):
    """Base class for all package errors."""


class ValidationError(DroClusterError, ValueError):
    """Input failed a precondition."""


class NumericalError(DroClusterError, ArithmeticError):
    """A numerical routine failed or could not converge."""


class InvalidData(ValidationError):
    pass


class ZeroVarianceColumn(ValidationError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"column {index} has zero sample variance")


class InvalidSpec(ValidationError):
    pass


class InvalidInput(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class InvalidFolds(ValidationError):
    pass


class InsufficientVariables(ValidationError):
    pass


class InvalidUpsilon(ValidationError):
    pass


class MemoryCapExceeded(ValidationError):
    pass


class InvalidCsv(ValidationError):
    pass


class EmptyUniverse(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    pass


class InvalidCovariance(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SingularCovariance(NumericalError):
    pass


class SolverStalled(NumericalError):
    def __init__(self, message, residual=None, column=None):
        self.residual = residual
        self.column = column
        super().__init__(message)


class NumericalFailure(NumericalError):
    pass
