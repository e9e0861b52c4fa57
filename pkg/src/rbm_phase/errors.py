"""Exception hierarchy shared by all modules.

Two families matter to callers (and to the CLI exit codes): violated
preconditions, and numerical failures that happen on valid input.
"""


class RbmPhaseError(Exception):
    pass


class PreconditionError(RbmPhaseError, ValueError):
    """Inputs outside an operation's domain."""


class NumericalError(RbmPhaseError, ArithmeticError):
    """A numerical procedure failed on otherwise valid input."""


class NonFiniteError(NumericalError):
    pass


class RootFindingError(NumericalError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class ConvergenceError(NumericalError):
    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class NoPhaseTransitionError(PreconditionError):
    pass


class SupercriticalError(PreconditionError):
    pass


class NearCriticalError(PreconditionError):
    """Refusal to solve for a branch too close to the critical diffusion."""
