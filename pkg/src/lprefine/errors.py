"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class LprefineError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(LprefineError, ValueError):
    """Array shapes do not agree."""


class SingularSystem(LprefineError):
    """A regularized normal matrix could not be factorized."""


class InfeasibleConstraint(LprefineError):
    """No point satisfies the requested linear constraint."""


class NoConvergence(LprefineError):
    """An iterative linear solve exceeded its iteration budget."""

    def __init__(self, message: str, iterations: int = 0):
        super().__init__(message)
        self.iterations = iterations


class InfeasiblePoint(LprefineError):
    """The iterate does not satisfy Ax = b."""


class SolverContractViolation(LprefineError):
    """An accepted refinement step increased the objective."""


class UnsupportedExponent(LprefineError, ValueError):
    """The norm exponent is outside the supported range."""


class WidthBudgetExceeded(LprefineError):
    """The MWU loop used more width-reduction steps than its budget allows."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class AllProbesFailed(LprefineError):
    """Every binary-search probe exhausted its width budget."""

    def __init__(self, message: str, linear_solves: int = 0, width_steps: int = 0):
        super().__init__(message)
        self.linear_solves = linear_solves
        self.width_steps = width_steps


class DegenerateStep(LprefineError):
    """A weighted least-squares step came back as the zero vector."""


class SingularUpdate(LprefineError):
    """The low-rank correction matrix was numerically singular."""


class MalformedGraph(LprefineError, ValueError):
    """Graph data violates a structural requirement."""
