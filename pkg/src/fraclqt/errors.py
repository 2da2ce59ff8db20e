"""Exception hierarchy shared by the solver, synthesis and CLI layers."""


class FraclqtError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FraclqtError, ValueError):
    """Malformed or inconsistent user input (shapes, schema, unknown names)."""


class DomainError(FraclqtError, ValueError):
    """Argument outside the numerically safe domain of a routine."""


class SolverError(FraclqtError, RuntimeError):
    """A linear solve failed or was too ill-conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(SolverError):
    """An iteration hit its cap without meeting its tolerance."""

    def __init__(self, message, last_change=None):
        super().__init__(message)
        self.last_change = last_change


class SynthesisError(FraclqtError, RuntimeError):
    """Gain extraction failed (e.g. a singular state snapshot)."""


class VerificationError(FraclqtError, AssertionError):
    """A verification check exceeded its tolerance."""


class TheoremRangeWarning(UserWarning):
    """Fractional order outside (0.9, 1], where the optimality conditions are stated."""
