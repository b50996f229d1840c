"""Exception types. The CLI maps each family to its own exit code."""


class HsfpError(Exception):
    pass


class ConfigError(HsfpError):
    """Bad or missing configuration (exit code 1)."""


class DataError(HsfpError, ValueError):
    """Input data violates a precondition (exit code 2)."""


class NumericalError(HsfpError, ArithmeticError):
    """A solver failed to converge or hit a degenerate system (exit code 3)."""
