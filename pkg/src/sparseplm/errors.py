"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad field values, shape mismatches, malformed files."""


class InfeasibleError(ValueError):
    """Parameters violate the feasible set of the requested formulation."""


class DivergenceError(RuntimeError):
    """Solver produced a non-finite objective; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class IllConditionedError(RuntimeError):
    """Covariance step refused; carries the offending condition number."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class DegenerateDataError(ValueError):
    """Data has no usable variation (e.g. all residuals identical)."""
