"""Exception types raised across the estimation library."""

import numpy as np


class ContractError(ValueError):
    """An argument violates a documented shape or value contract."""


class SingularCovarianceError(np.linalg.LinAlgError):
    """A covariance (or its factor) could not be factorized or inverted."""


class SingularInnovationError(SingularCovarianceError):
    """The innovation covariance of a measurement update is singular."""


class DegenerateNoiseError(SingularCovarianceError):
    """The combined observation-noise covariance is not positive definite."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Normal equations of a regression are rank deficient."""


class DegenerateCloudError(ValueError):
    """Every projection direction of a point cloud has zero spread."""


class ZeroScaleError(ValueError):
    """All residuals are zero, so the robust scale is undefined."""


class ColdStart(LookupError):
    """No previous time step is available to build the scatter matrix."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
