"""Exception types shared across the package."""


class RftLabError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(RftLabError, ValueError):
    """A geometry, trajectory, map, or dataset spec is invalid."""


class ConfigError(RftLabError, ValueError):
    """A workbench configuration file or value is malformed."""


class NumericalError(RftLabError, RuntimeError):
    """A numerical operation failed beyond recovery."""


class FactorizationError(NumericalError):
    """Covariance factorization failed even at maximum jitter."""


class SingularConfigurationError(NumericalError):
    """A kinematic configuration is singular or outside the workspace."""


class DegenerateFitError(NumericalError):
    """A least-squares design matrix is rank deficient."""


class StageError(RftLabError):
    """A pipeline stage failed; the original error is chained as __cause__."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[stage {stage}] {message}")
        self.stage = stage
