"""Exception hierarchy shared across the package."""


class CPQError(Exception):
    """Base class for all errors raised by :mod:`cpq`."""


class InvalidParameter(CPQError, ValueError):
    """A parameter is outside its documented domain."""


class InvalidInput(CPQError, ValueError):
    """An input collection is empty or otherwise unusable."""


class UndefinedEstimate(CPQError, ValueError):
    """An estimator was evaluated on an empty tally (t = 0)."""


class UnknownLabel(CPQError, KeyError):
    """A label was requested that does not occur in the tally."""


class BudgetExhausted(CPQError):
    """A replay source has no more recorded samples for an input."""


class OracleIOError(CPQError):
    """The external oracle timed out or violated the line protocol."""


class ParseError(CPQError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(ParseError):
    pass


class InfeasibleCalibration(CPQError):
    """No candidate threshold reaches the requested coverage."""


class ModelFormatError(CPQError, ValueError):
    """A persisted calibration model has the wrong format or version."""
