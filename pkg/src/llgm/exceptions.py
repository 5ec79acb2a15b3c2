"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/schema problems exit
with 2, numerical failures with 3.
"""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid configuration file, CLI flags, or input-file schema."""


class NumericalError(Exception):
    """Base class for numerical failures during fitting or scoring."""


class NotPositiveDefiniteError(NumericalError):
    """A matrix required to be positive definite failed Cholesky, even
    after the documented one-shot jitter."""


class GridBoundaryError(NumericalError):
    """A discretized hyperparameter posterior is carrying non-negligible
    mass at a grid boundary, i.e. the grid does not cover the posterior."""

    def __init__(self, message: str, boundary_mass: float | None = None,
                 dimension: int | None = None):
        super().__init__(message)
        self.boundary_mass = boundary_mass
        self.dimension = dimension


class CpoUnderflowError(NumericalError):
    """A leave-one-out predictive density underflowed to zero."""

    def __init__(self, message: str, observation: int | None = None,
                 region: int | None = None):
        super().__init__(message)
        self.observation = observation
        self.region = region


class SingularSystemError(NumericalError):
    """A smoothing system has no unique solution (e.g. not enough
    informative observations to pin down the null space)."""
