"""Exception hierarchy shared by all modules."""


class MflowError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(MflowError, ValueError):
    """A precondition on an argument was violated."""


class NumericError(MflowError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ConvergenceError(NumericError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ReconstructionError(MflowError):
    """A stage of the surface reconstruction pipeline failed.

    ``stage`` names the failing stage so callers can tell e.g. an
    orientation failure from an empty iso-surface.
    """

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class FormatError(MflowError, ValueError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f", line {line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
