"""Exception hierarchy shared by the engine, the CLI and the helpers."""


class CpdError(Exception):
    """Base class for all errors raised by dmdcpd."""


class ConfigError(CpdError, ValueError):
    """Inconsistent shapes, ranks or window parameters."""


class StateError(CpdError, RuntimeError):
    """Operation is invalid for the current tracked state."""


class NumericalError(CpdError, ArithmeticError):
    """A linear solve or factorization broke down."""

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class DataError(CpdError, ValueError):
    """Malformed input data."""
