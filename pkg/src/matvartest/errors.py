"""Exception hierarchy shared across the package.

Three broad families map onto the CLI exit codes: bad parameter values
(usage, exit 2), defective input data or configuration (exit 3), and
numerical or convergence failures (exit 4).
"""

from __future__ import annotations


class MatvarError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(MatvarError, ValueError):
    """A function argument is outside its documented domain."""


class DataError(MatvarError, ValueError):
    """Input data violates a structural requirement (shape, finiteness, ...)."""


class DegenerateVariableError(DataError):
    """A variable has zero sample variance; correlations are undefined."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(
            f"variable {index + 1} has zero sample variance; "
            "correlations are undefined"
        )


class ConfigError(DataError):
    """An experiment configuration fails validation."""


class NumericalError(MatvarError, RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class NotPSDError(NumericalError):
    """A matrix required to be positive semidefinite is not, beyond tolerance."""

    def __init__(self, min_eigenvalue: float, tol: float):
        self.min_eigenvalue = min_eigenvalue
        self.tol = tol
        super().__init__(
            f"matrix is not positive semidefinite: smallest eigenvalue "
            f"{min_eigenvalue:.6e} is below -{tol:.6e}"
        )


class DegenerateSandwichError(NumericalError):
    """A de-correlated variance came out nonpositive; the precision estimate
    is unusable for studentization."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(
            f"de-correlated variance for variable {index + 1} is "
            f"{value:.6e} (must be positive); the precision matrix estimate "
            "is too inaccurate to studentize"
        )


class InfeasibleError(NumericalError):
    """The constraint set of a column program is empty at the given level."""

    def __init__(self, column: int, lam: float):
        self.column = column
        self.lam = lam
        super().__init__(
            f"column {column + 1} program infeasible at level {lam:.6g}"
        )


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class TuningError(NumericalError):
    """No usable point on the tuning grid."""
