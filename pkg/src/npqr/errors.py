"""Exception hierarchy shared by all npqr modules.

Every error carries the name of the module that raised it so that the CLI can
report where a run failed. ``ConfigError`` and ``DataError`` map to exit code 2,
``NumericalError`` and its subclasses to exit code 3.
"""

from __future__ import annotations


class NpqrError(Exception):
    """Base class for npqr errors."""

    module = "npqr"

    def __init__(self, message: str, *, module: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self) -> str:
        return f"[{self.module}] {self.args[0]}"


class ConfigError(NpqrError, ValueError):
    """Invalid configuration or arguments."""

    module = "cli"


class DataError(NpqrError, ValueError):
    """Malformed or inconsistent input data."""

    module = "dataio"


class NumericalError(NpqrError, ArithmeticError):
    """A numerical procedure failed."""


class RankDeficiencyError(NumericalError):
    """Design matrix is not of full column rank."""

    def __init__(self, message: str, dependent: list[str] | None = None, **kw):
        super().__init__(message, **kw)
        self.dependent = list(dependent or [])


class ConvergenceError(NumericalError):
    """Interior-point solver did not converge."""

    module = "qrfit"

    def __init__(self, message: str, duality_gap: float = float("nan"), tau: float | None = None, **kw):
        super().__init__(message, **kw)
        self.duality_gap = duality_gap
        self.tau = tau


class JacobianError(NumericalError):
    """Kernel estimate of the Jacobian is not positive definite."""

    module = "inference"
