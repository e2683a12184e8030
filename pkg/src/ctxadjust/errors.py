"""Exception types shared across the package."""


class CtxAdjustError(Exception):
    """Base class for all package errors."""


class SchemaError(CtxAdjustError):
    """A file does not match its documented schema (e.g. missing column)."""


class ConsistencyError(CtxAdjustError):
    """Event stream contradicts the game's reported metadata."""


class TermError(CtxAdjustError):
    """A model term cannot be constructed from the data provided."""


class FitError(CtxAdjustError):
    """Model fitting failed."""


class ConvergenceError(FitError):
    """Iterative fit did not converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SingularError(FitError):
    """Penalized system is singular; names the deficient term."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class DegenerateFitError(FitError):
    """Fit collapsed to a degenerate solution (e.g. all structural zeros)."""
