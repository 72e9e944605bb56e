"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A problem configuration is malformed or violates an invariant."""


class KernelNotSquareIntegrableError(ValueError):
    """A fractional kernel exponent fails alpha > 1/2."""


class NotSDEReducibleError(ValueError):
    """The problem's kernels are not constant in their first argument."""


class OracleFailureError(RuntimeError):
    """The classical Riccati ODE oracle broke down (singular R + D'PD)."""


class SolverDivergenceError(RuntimeError):
    """An inner fixed-point iteration failed to converge.

    Carries the per-level residual history so callers can inspect where
    the iteration stalled.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class NearSingularGainWarning(UserWarning):
    """R + D'PD is close to singular; pseudoinverse gains may be fragile."""
