"""Robust unscented Kalman filtering with a Huber GM-estimator.

The baseline UKF lives in :mod:`gmukf.unscented`; the robust update
(projection-statistics weights, IRLS, influence-function covariance) in
:mod:`gmukf.robust`.
"""

from .errors import (ColdStart, ConfigError, ContractError, DegenerateCloudError,
                     DegenerateNoiseError, RankDeficiencyError, SingularCovarianceError,
                     SingularInnovationError, ZeroScaleError)
from .models import DynamicModel, LinearModel, SwingModel, observe, step_truth
from .noise import NoiseSpec, OutlierEvent, OutlierSchedule, apply_outliers, nominal_R, sample
from .regression import BatchRegression, PrewhitenedRegression, build_batch_regression, prewhiten, wls_solve
from .robust import (FilterHistory, GMConfig, GMEstimate, OutlierDiagnostics, ScatterMatrix,
                     build_scatter_matrix, compute_diagnostics, gm_solve, gm_ukf_step, huber_psi,
                     huber_rho, huber_weight, projection_statistics, robust_scale,
                     update_covariance)
from .unscented import (GaussianBelief, SigmaPointSet, StatLinearization, generate_sigma_points,
                        statistical_linearize, ukf_predict, ukf_update, unscented_transform)

__version__ = "0.1.0"
