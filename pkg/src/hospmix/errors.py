"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class HospmixError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(HospmixError, ValueError):
    exit_code = 2


class ValidationError(HospmixError, ValueError):
    """A value does not satisfy a documented invariant (bad level, bad parameter)."""

    exit_code = 2


class DataError(HospmixError, ValueError):
    exit_code = 3


class IdentifiabilityError(DataError):
    """A design column carries no information in the data."""


class ImpossibleDataError(DataError):
    """The log-likelihood is -inf: the data cannot arise under the parameters."""


class NumericalError(HospmixError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularHessianError(NumericalError):
    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions or []
