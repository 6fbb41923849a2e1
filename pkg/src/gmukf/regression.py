"""Batch-mode regression form of the measurement update.

The prediction and the observation are stacked into one overdetermined
linear model

    [ z + H x_pred - z_hat ]   [ H ]       [ nu + eps ]
    [        x_pred        ] = [ I ] x  +  [  -delta  ]

whose error covariance ``W = blockdiag(Sigma, P_pred) = S S^T`` is
block-diagonal. Rows ``0..m-1`` are measurements and rows ``m..m+n-1`` the
prediction; the robust stage relies on that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, solve_triangular

from .errors import (ContractError, DegenerateNoiseError, RankDeficiencyError,
                     SingularCovarianceError)
from .models import DynamicModel
from .unscented import GaussianBelief, cholesky_jittered, predict_measurement, symmetrize


@dataclass
class BatchRegression:
    z_tilde: np.ndarray
    H_tilde: np.ndarray
    W: np.ndarray
    S: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray
    R_tilde: np.ndarray
    x_pred: np.ndarray
    innovation: np.ndarray  # z - h(x_pred), point-evaluated

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]


@dataclass
class PrewhitenedRegression:
    """``y = S^-1 z_tilde``, ``C = S^-1 H_tilde``; unit error covariance."""

    y: np.ndarray
    C: np.ndarray
    m: int = 0


def _clip_psd(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(M)
    if vals.min() >= 0.0:
        return M
    return symmetrize((vecs * np.clip(vals, 0.0, None)) @ vecs.T)


def build_batch_regression(pred: GaussianBelief, model: DynamicModel, z, u=None) -> BatchRegression:
    """Statistically linearize ``h`` about the prediction and stack the regression.

    Raises
    ------
    SingularCovarianceError
        The predicted covariance cannot be factorized.
    DegenerateNoiseError
        ``Sigma = R + R_tilde`` is not positive definite, even with jitter.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (model.m,):
        raise ContractError(f"z must have length {model.m}, got shape {z.shape}")
    n = model.n
    mp = predict_measurement(pred, model, u)
    try:
        cf = cho_factor(pred.cov, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("predicted covariance is singular") from exc

    PinvPxz = cho_solve(cf, mp.P_xz, check_finite=False)
    H = PinvPxz.T
    R_tilde = _clip_psd(symmetrize(mp.P_yy - mp.P_xz.T @ PinvPxz))
    Sigma = symmetrize(model.R + R_tilde)
    try:
        S_top = cholesky_jittered(Sigma)
    except SingularCovarianceError as exc:
        raise DegenerateNoiseError("Sigma = R + R_tilde is not positive definite") from exc
    S_bottom = np.tril(cf[0])

    z_tilde = np.concatenate([z + H @ pred.mean - mp.z_hat, pred.mean])
    H_tilde = np.vstack([H, np.eye(n)])
    W = block_diag(Sigma, pred.cov)
    S = block_diag(S_top, S_bottom)
    innovation = z - model.h(pred.mean, u)
    return BatchRegression(z_tilde, H_tilde, W, S, H, Sigma, R_tilde,
                           pred.mean.copy(), innovation)


def prewhiten(reg: BatchRegression) -> PrewhitenedRegression:
    diag = np.abs(np.diag(reg.S))
    if diag.min() <= 1e-300:
        raise SingularCovarianceError("Cholesky factor S is singular")
    y = solve_triangular(reg.S, reg.z_tilde, lower=True, check_finite=False)
    C = solve_triangular(reg.S, reg.H_tilde, lower=True, check_finite=False)
    return PrewhitenedRegression(y, C, reg.m)


def least_squares(C: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ordinary least squares via QR; returns ``(x, (C^T C)^-1)``."""
    Qf, Rf = np.linalg.qr(C)
    d = np.abs(np.diag(Rf))
    if d.size == 0 or d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise RankDeficiencyError("design matrix is rank deficient")
    x = solve_triangular(Rf, Qf.T @ y, check_finite=False)
    Rinv = solve_triangular(Rf, np.eye(Rf.shape[0]), check_finite=False)
    return x, symmetrize(Rinv @ Rinv.T)


def wls_solve(reg: Union[BatchRegression, PrewhitenedRegression]):
    """Weighted least squares with weight ``W^-1``.

    Solved as ordinary least squares on the prewhitened system, which gives
    the same estimate and covariance as the Kalman update.
    """
    pw = prewhiten(reg) if isinstance(reg, BatchRegression) else reg
    return least_squares(pw.C, pw.y)
