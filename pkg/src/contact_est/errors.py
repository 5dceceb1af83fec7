"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class ContactEstError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ContactEstError, ValueError):
    """An input violates a documented precondition."""


class DegenerateQueryError(ContactEstError):
    """Contact query cannot be solved, e.g. coincident body centers."""


class DegeneracyError(ContactEstError):
    """The contact Jacobian at the solution is singular.

    ``shape`` names the body whose support Jacobian lost rank, when it
    can be identified.
    """

    def __init__(self, message: str, shape: str | None = None):
        super().__init__(message)
        self.shape = shape


class ConvergenceError(ContactEstError):
    """An iterative solver hit its iteration budget.

    The best iterate found so far is attached as ``best`` so callers can
    inspect or fall back to it.
    """

    def __init__(self, message: str, best=None, iterations: int = 0):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class IllConditionedError(ContactEstError):
    """A sensitivity system is too ill-conditioned even for least squares."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class GeometryFileError(InvalidArgumentError):
    """A geometry or scenario file is malformed; carries a line number."""

    def __init__(self, message: str, path: str = "<string>", line: int | None = None):
        loc = f"{path}:{line}" if line is not None else path
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line
