"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ConvergenceError(RuntimeError):
    """Iterative solver did not reach its tolerance."""


class DegenerateSampleError(ValueError):
    """Sample cannot support the requested statistic (zero variance, tiny band, ...)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class SubsampleTooSmallError(DegenerateSampleError):
    pass


class InputParseError(ValueError):
    """Malformed input file; carries the offending location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SimulationError(RuntimeError):
    """Too many replications failed to produce a finite statistic."""

    def __init__(self, message, failures=0, total=0):
        super().__init__(message)
        self.failures = failures
        self.total = total
