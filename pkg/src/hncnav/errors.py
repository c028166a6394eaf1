"""Exception types shared across the package."""


class InvalidGeometryError(ValueError):
    """Beam geometry that would make the beam matrix rank deficient."""


class EstimationError(RuntimeError):
    """Least-squares velocity recovery failed."""


class NumericalFailure(RuntimeError):
    """Filter covariance lost symmetry/positive semi-definiteness."""


class UpdateRejected(RuntimeError):
    """Innovation covariance is numerically singular; the update was skipped."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""


class ConfigurationError(ValueError):
    """Inconsistent scenario, strategy or model configuration."""


class UndefinedMetricError(ValueError):
    """Relative metric requested against a zero reference."""
