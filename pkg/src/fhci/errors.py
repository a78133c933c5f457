"""Exception hierarchy."""


class FayHerriotError(Exception):
    """Base class for all package errors."""


class RankDeficiencyError(FayHerriotError, ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class AdmissibilityError(FayHerriotError, ValueError):
    """An uncertainty measure would be non-positive."""


class ConvergenceError(FayHerriotError, RuntimeError):
    """The variance maximizer ran out of iterations."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class ExistenceWarning(UserWarning):
    """The existence condition for an adjusted estimator fails."""


class DataFormatError(FayHerriotError, ValueError):
    """Malformed input file; ``row`` and ``column`` locate the problem."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column
