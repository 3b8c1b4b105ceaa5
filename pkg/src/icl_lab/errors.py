"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class IclLabError(Exception):
    exit_code = 1


class ConfigError(IclLabError, ValueError):
    exit_code = 2


class DimensionError(IclLabError, ValueError):
    exit_code = 2


class AssumptionViolation(IclLabError, ValueError):
    """An input breaks a hypothesis the theory needs (e.g. zeta0 <= 0)."""

    exit_code = 2


class NumericError(IclLabError, ArithmeticError):
    exit_code = 3


class SingularityError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvariantFailure(IclLabError):
    exit_code = 1
