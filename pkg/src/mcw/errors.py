"""Exception hierarchy.

Validation errors map to CLI exit code 1, numerical failures to exit code 2.
"""


class McwError(Exception):
    exit_code = 2


class ValidationError(McwError, ValueError):
    """Bad input: malformed model, out-of-domain argument, bad flag."""

    exit_code = 1


class DomainError(ValidationError):
    pass


class NumericalError(McwError, ArithmeticError):
    """A computation could not produce a trustworthy answer."""

    exit_code = 2


class NoSaddleFound(NumericalError):
    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class DegenerateMaximizer(NumericalError):
    pass


class BudgetExceeded(NumericalError):
    pass


class MixingFailure(NumericalError):
    def __init__(self, message, rhat=None):
        super().__init__(message)
        self.rhat = rhat
