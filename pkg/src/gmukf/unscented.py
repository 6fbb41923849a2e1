"""Sigma points, the unscented transform, statistical linearization and the UKF.

The sigma-point scheme is the symmetric 2n-point set without a center point,

    chi_i = x +/- (sqrt(n P))_i,    w_i = 1 / (2n),

whose weighted mean and scatter reproduce ``x`` and ``P`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ContractError, SingularCovarianceError, SingularInnovationError
from .models import DynamicModel

JITTER_STEPS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def cholesky_jittered(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``M``, adding ``eps * I`` on failure.

    ``eps`` escalates by decades from 1e-12 to 1e-6 before giving up.
    """
    eye = np.eye(M.shape[0])
    for eps in JITTER_STEPS:
        try:
            return np.linalg.cholesky(M + eps * eye if eps else M)
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError("covariance is not positive definite even after jitter")


@dataclass
class GaussianBelief:
    """State mean and covariance at one time step."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float, ndmin=1)
        self.cov = np.array(self.cov, dtype=float, ndmin=2)
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ContractError(f"belief mean {self.mean.shape} and cov {self.cov.shape} disagree")

    @property
    def n(self) -> int:
        return self.mean.shape[0]


@dataclass
class SigmaPointSet:
    points: np.ndarray
    weights: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    @property
    def scatter(self) -> np.ndarray:
        d = self.points - self.mean
        return symmetrize((d * self.weights[:, None]).T @ d)


@dataclass
class StatLinearization:
    """Affine fit ``g(x) ~ A x + b`` with linearization-error covariance ``P_zeta``."""

    A: np.ndarray
    b: np.ndarray
    P_zeta: np.ndarray

    def posterior(self, points: SigmaPointSet) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of ``A x + b + zeta`` under the points' moments."""
        mean = self.A @ points.mean + self.b
        cov = symmetrize(self.A @ points.scatter @ self.A.T + self.P_zeta)
        return mean, cov


def generate_sigma_points(belief: GaussianBelief) -> SigmaPointSet:
    n = belief.n
    L = cholesky_jittered(n * belief.cov)
    points = np.concatenate([belief.mean + L.T, belief.mean - L.T])
    return SigmaPointSet(points, np.full(2 * n, 1.0 / (2 * n)))


def _propagate(points: SigmaPointSet, g: Callable) -> np.ndarray:
    Y = np.asarray(g(points.points), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != points.points.shape[0]:
        raise ContractError("g must map each sigma point (row) to one output row")
    return Y


def _moments(points: SigmaPointSet, Y: np.ndarray):
    w = points.weights
    x_bar = w @ points.points
    y_bar = w @ Y
    dX = points.points - x_bar
    dY = Y - y_bar
    wdY = dY * w[:, None]
    P_yy = symmetrize(dY.T @ wdY)
    P_xy = dX.T @ wdY
    return x_bar, y_bar, P_xy, P_yy


def unscented_transform(points: SigmaPointSet, g: Callable,
                        additive_cov: Optional[np.ndarray] = None):
    """Push a sigma-point set through ``g``.

    ``g`` is called once on the ``(2n, n)`` array of points and must return
    one row per point.

    Returns
    -------
    mean : ndarray
    cov : ndarray
        Weighted scatter of the transformed points plus ``additive_cov``.
    cross_cov : ndarray
        Cross-covariance between the points and their images.
    """
    Y = _propagate(points, g)
    _, y_bar, P_xy, P_yy = _moments(points, Y)
    if additive_cov is not None:
        P_yy = symmetrize(P_yy + additive_cov)
    return y_bar, P_yy, P_xy


def statistical_linearize(points: SigmaPointSet, g: Callable) -> StatLinearization:
    """Weighted least-squares affine fit of ``g`` over the sigma points."""
    Y = _propagate(points, g)
    x_bar, y_bar, P_xy, P_yy = _moments(points, Y)
    P_xx = points.scatter
    try:
        cf = cho_factor(P_xx, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("sigma-point scatter is singular") from exc
    A = cho_solve(cf, P_xy, check_finite=False).T
    b = y_bar - A @ x_bar
    P_zeta = symmetrize(P_yy - P_xy.T @ cho_solve(cf, P_xy, check_finite=False))
    return StatLinearization(A, b, P_zeta)


def ukf_predict(belief: GaussianBelief, model: DynamicModel, u=None) -> GaussianBelief:
    points = generate_sigma_points(belief)
    mean, cov, _ = unscented_transform(points, lambda X: model.f(X, u), model.Q)
    return GaussianBelief(mean, cov)


@dataclass
class MeasurementPrediction:
    """Unscented moments of ``h`` over sigma points drawn from a predicted belief.

    ``P_yy`` is the scatter of ``h`` alone; ``P_zz = P_yy + R``.
    """

    z_hat: np.ndarray
    P_yy: np.ndarray
    P_zz: np.ndarray
    P_xz: np.ndarray


def predict_measurement(pred: GaussianBelief, model: DynamicModel, u=None) -> MeasurementPrediction:
    points = generate_sigma_points(pred)
    z_hat, P_yy, P_xz = unscented_transform(points, lambda X: model.h(X, u))
    return MeasurementPrediction(z_hat, P_yy, symmetrize(P_yy + model.R), P_xz)


def ukf_update(pred: GaussianBelief, model: DynamicModel, z, u=None) -> GaussianBelief:
    """Kalman measurement update with unscented moments of ``h``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.m,):
        raise ContractError(f"z must have length {model.m}, got shape {z.shape}")
    mp = predict_measurement(pred, model, u)
    try:
        cf = cho_factor(mp.P_zz, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance P_zz is singular") from exc
    K = cho_solve(cf, mp.P_xz.T, check_finite=False).T
    mean = pred.mean + K @ (z - mp.z_hat)
    cov = symmetrize(pred.cov - K @ mp.P_zz @ K.T)
    return GaussianBelief(mean, cov)
