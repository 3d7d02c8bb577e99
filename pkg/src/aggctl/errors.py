"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Non-finite or malformed numerical input."""


class DesignViolation(ValueError):
    """A gain, step size or matrix fails the convergence design conditions."""


class InfeasibleSetError(ValueError):
    """A constraint set is empty."""


class SolverStall(RuntimeError):
    """An agent's inner solver hit its iteration cap before converging."""

    def __init__(self, message, grad_norm=float("nan"), agent_id=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.agent_id = agent_id


class OracleStall(RuntimeError):
    """Dual decomposition did not close the primal gap in time."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(message)
        self.gap = gap
