"""Robust measurement update: projection statistics, Huber GM-estimation, covariance.

The pipeline for one time step is

1. ``ukf_predict`` and ``build_batch_regression`` (stacked regression),
2. ``build_scatter_matrix`` + ``compute_diagnostics`` (outlier weights from
   projection statistics of the serially paired innovations and predictions),
3. ``prewhiten`` and ``gm_solve`` (IRLS on the Huber objective),
4. ``update_covariance`` (asymptotic covariance from the influence function).

``gm_ukf_step`` chains all of it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import chi2, norm

from .errors import (ColdStart, ContractError, DegenerateCloudError, RankDeficiencyError,
                     ZeroScaleError)
from .models import DynamicModel
from .regression import (PrewhitenedRegression, build_batch_regression, least_squares,
                         prewhiten)
from .unscented import GaussianBelief, symmetrize, ukf_predict

log = logging.getLogger(__name__)

MAD_CONSISTENCY = 1.4826
SCALE_FLOOR = 1e-12


@dataclass
class GMConfig:
    """Tuning of the GM-estimator.

    ``lam`` is the Huber threshold (1.5 to 3 is the usual range; larger values
    move the estimator toward least squares). ``d`` sets the projection-statistic
    weights ``min(1, d^2 / PS^2)``. Rows with ``PS^2`` above the
    ``eta_quantile`` quantile of chi-square(``eta_df``) are flagged.
    ``irls_tol`` bounds the infinity norm of the last IRLS step, in state units.
    ``force_unit_weights`` pins every weight to one (Huber-only update).
    """

    lam: float = 1.5
    d: float = 1.5
    eta_df: int = 2
    eta_quantile: float = 0.975
    irls_tol: float = 1e-2
    irls_max_iter: int = 50
    b_m: float = 1.0
    force_unit_weights: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError("lam must be positive")
        if not 1.5 <= self.lam <= 3.0:
            log.debug("Huber threshold %.3g outside the customary [1.5, 3] range", self.lam)
        if not self.d > 0 or not self.b_m > 0:
            raise ContractError("d and b_m must be positive")
        if self.eta_df < 1 or not 0.0 < self.eta_quantile < 1.0:
            raise ContractError("eta_df must be >= 1 and eta_quantile in (0, 1)")
        if not self.irls_tol > 0 or self.irls_max_iter < 1:
            raise ContractError("irls_tol must be positive and irls_max_iter >= 1")

    @property
    def eta(self) -> float:
        return chi_square_threshold(self.eta_df, self.eta_quantile)


@lru_cache(maxsize=None)
def chi_square_threshold(df: int, quantile: float) -> float:
    return float(chi2.ppf(quantile, df))


# --------------------------------------------------------------------------
# Outlier diagnostics
# --------------------------------------------------------------------------

@dataclass
class ScatterMatrix:
    """Rows ``0..m-1``: innovations at ``k-1`` and ``k``; rows ``m..``: predictions."""

    rows: np.ndarray
    m: int

    @property
    def n(self) -> int:
        return self.rows.shape[0] - self.m

    @property
    def innovations(self) -> np.ndarray:
        return self.rows[: self.m]

    @property
    def predictions(self) -> np.ndarray:
        return self.rows[self.m:]


@dataclass
class OutlierDiagnostics:
    ps: np.ndarray
    weights: np.ndarray
    eta: float
    flags: np.ndarray
    status: Tuple[str, ...] = ()


@dataclass
class FilterHistory:
    """Innovation and predicted state of the previous step."""

    innovation: np.ndarray
    prediction: np.ndarray


def build_scatter_matrix(innov_prev, innov_curr, pred_prev, pred_curr) -> ScatterMatrix:
    if innov_prev is None or pred_prev is None:
        raise ColdStart("no previous step; the scatter matrix needs two time samples")
    ip, ic = np.asarray(innov_prev, float), np.asarray(innov_curr, float)
    pp, pc = np.asarray(pred_prev, float), np.asarray(pred_curr, float)
    if ip.shape != ic.shape or pp.shape != pc.shape or ip.ndim != 1 or pp.ndim != 1:
        raise ContractError("innovations and predictions must be vectors of matching lengths")
    rows = np.column_stack([np.concatenate([ip, pp]), np.concatenate([ic, pc])])
    return ScatterMatrix(rows, ip.shape[0])


def projection_statistics(points, chunk: int = 256) -> np.ndarray:
    """Projection statistic of every point of a cloud.

    Candidate directions run from the coordinatewise median through each
    point. Along each direction the projections are standardized by their
    median and ``1.4826 * MAD``; a point's statistic is its largest
    standardized distance over all directions. Directions with zero MAD are
    skipped.

    Raises
    ------
    DegenerateCloudError
        Fewer than three points, or no direction with nonzero spread.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ContractError("points must be a 2-D array (one point per row)")
    N = X.shape[0]
    if N < 3:
        raise DegenerateCloudError(f"projection statistics need at least 3 points, got {N}")
    D = X - np.median(X, axis=0)
    norms = np.sqrt(np.einsum("ij,ij->i", D, D))
    spread = norms.max()
    if not spread > 0:
        raise DegenerateCloudError("all points coincide")
    keep = norms > 1e-12 * spread
    directions = D[keep] / norms[keep, None]

    ps = np.full(N, -np.inf)
    for start in range(0, directions.shape[0], chunk):
        proj = X @ directions[start:start + chunk].T
        dev = np.abs(proj - np.median(proj, axis=0))
        mad = np.median(dev, axis=0)
        ok = mad > 1e-12 * spread
        if np.any(ok):
            ps = np.maximum(ps, (dev[:, ok] / (MAD_CONSISTENCY * mad[ok])).max(axis=1))
    if not np.all(np.isfinite(ps)):
        raise DegenerateCloudError("every projection direction has zero MAD")
    return ps


def ps_weights(ps, d: float = 1.5) -> np.ndarray:
    """``min(1, d^2 / PS^2)``; zero statistics map to weight one."""
    ps = np.asarray(ps, dtype=float)
    with np.errstate(divide="ignore"):
        return np.minimum(1.0, d * d / (ps * ps))


def unit_diagnostics(m: int, n: int, cfg: GMConfig, status=("cold_start",)) -> OutlierDiagnostics:
    return OutlierDiagnostics(np.full(m + n, np.nan), np.ones(m + n), cfg.eta,
                              np.zeros(m + n, dtype=bool), tuple(status))


def compute_diagnostics(Z: ScatterMatrix, cfg: GMConfig) -> OutlierDiagnostics:
    """Projection statistics of the innovation and prediction sub-clouds, separately.

    A degenerate sub-cloud keeps unit weights and is reported in ``status``.
    """
    ps = np.full(Z.rows.shape[0], np.nan)
    status = []
    for name, sl in (("innovation", slice(0, Z.m)), ("prediction", slice(Z.m, None))):
        try:
            ps[sl] = projection_statistics(Z.rows[sl])
        except DegenerateCloudError:
            status.append(f"degenerate_{name}")
    eta = cfg.eta
    finite = np.isfinite(ps)
    weights = np.ones_like(ps)
    weights[finite] = ps_weights(ps[finite], cfg.d)
    flags = np.zeros(ps.shape, dtype=bool)
    flags[finite] = ps[finite] ** 2 > eta
    if cfg.force_unit_weights:
        weights[:] = 1.0
        status.append("unit_weights")
    return OutlierDiagnostics(ps, weights, eta, flags, tuple(status))


# --------------------------------------------------------------------------
# Huber GM-estimator
# --------------------------------------------------------------------------

def huber_rho(r, lam):
    a = np.abs(r)
    return np.where(a < lam, 0.5 * a * a, lam * a - 0.5 * lam * lam)


def huber_psi(r, lam):
    return np.clip(r, -lam, lam)


def huber_weight(r, lam):
    """``psi(r) / r``, continuously extended by 1 at ``r = 0``."""
    a = np.abs(r)
    with np.errstate(divide="ignore"):
        return np.where(a <= lam, 1.0, lam / a)


def robust_scale(residuals, b_m: float = 1.0) -> float:
    """``1.4826 * b_m * median |r|``."""
    a = np.abs(np.asarray(residuals, dtype=float))
    if not np.any(a):
        raise ZeroScaleError("all residuals are zero")
    return MAD_CONSISTENCY * b_m * float(np.median(a))


def gm_objective(r, s, weights, lam) -> float:
    """``sum_i w_i^2 rho(r_i / (s w_i))``."""
    return float(np.sum(weights ** 2 * huber_rho(r / (s * weights), lam)))


@dataclass
class GMEstimate:
    state: np.ndarray
    cov: Optional[np.ndarray]
    weights: np.ndarray
    residuals: np.ndarray
    standardized: np.ndarray
    scale: float
    iterations: int
    converged: bool
    last_step: float = float("nan")
    objective: List[float] = field(default_factory=list)
    diagnostics: Optional[OutlierDiagnostics] = None
    prediction: Optional[GaussianBelief] = None


def gm_solve(reg: PrewhitenedRegression, diag: OutlierDiagnostics, x0, cfg: GMConfig) -> GMEstimate:
    """Minimize the weighted Huber objective by iteratively reweighted least squares.

    The scale is estimated once from the residuals at ``x0`` and frozen, which
    makes each IRLS step a majorize-minimize step (the objective never rises).
    Every iterate is the full solution of the reweighted normal equations;
    the difference of successive iterates is only used for the stopping test.
    ``objective`` holds the objective at ``x0`` and after every iteration.
    """
    C, y = reg.C, reg.y
    w = np.asarray(diag.weights, dtype=float)
    lam = cfg.lam
    x = np.asarray(x0, dtype=float).copy()
    r = y - C @ x
    try:
        s = robust_scale(r, cfg.b_m)
    except ZeroScaleError:
        s = SCALE_FLOOR
    s = max(s, SCALE_FLOOR)

    objective = [gm_objective(r, s, w, lam)]
    converged = False
    it = 0
    step = float("nan")
    for it in range(1, cfg.irls_max_iter + 1):
        q = huber_weight(r / (s * w), lam)
        CtQ = C.T * q
        try:
            cf = cho_factor(CtQ @ C, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("reweighted normal equations are singular") from exc
        x_new = cho_solve(cf, CtQ @ y, check_finite=False)
        step = np.max(np.abs(x_new - x))
        x = x_new
        r = y - C @ x
        objective.append(gm_objective(r, s, w, lam))
        if step <= cfg.irls_tol:
            converged = True
            break

    est = GMEstimate(state=x, cov=None, weights=w, residuals=r, standardized=r / (s * w),
                     scale=s, iterations=it, converged=converged, last_step=float(step),
                     objective=objective,
                     diagnostics=diag)
    est.cov = update_covariance(reg, est, cfg)
    return est


@lru_cache(maxsize=64)
def huber_variance_factor(lam: float) -> float:
    """``E[psi^2] / E[psi']^2`` for the Huber psi at the standard Gaussian."""
    if np.isinf(lam):
        return 1.0
    e_dpsi = 2.0 * norm.cdf(lam) - 1.0
    e_psi2 = e_dpsi - 2.0 * lam * norm.pdf(lam) + 2.0 * lam * lam * norm.sf(lam)
    return float(e_psi2 / e_dpsi ** 2)


def update_covariance(reg: PrewhitenedRegression, est: GMEstimate, cfg: GMConfig) -> np.ndarray:
    """Asymptotic covariance of the GM estimate.

    ``factor * (C^T C)^-1 (C^T Q_w C) (C^T C)^-1`` with ``Q_w = diag(w^2)`` and
    ``factor = E[psi^2] / E[psi']^2`` at the standard Gaussian.
    """
    C = reg.C
    _, M = least_squares(C, np.zeros(C.shape[0]))
    w2 = np.asarray(est.weights, dtype=float) ** 2
    middle = (C.T * w2) @ C
    return symmetrize(huber_variance_factor(cfg.lam) * (M @ middle @ M))


def gm_ukf_step(belief: GaussianBelief, model: DynamicModel, z, u=None,
                history: Optional[FilterHistory] = None,
                cfg: Optional[GMConfig] = None) -> Tuple[GMEstimate, FilterHistory]:
    """One predict + robust update cycle.

    ``history`` carries the previous innovation and prediction; ``None`` marks
    the cold start, where the weights default to one.
    """
    cfg = cfg or GMConfig()
    pred = ukf_predict(belief, model, u)
    reg = build_batch_regression(pred, model, z, u)
    if history is None:
        diag = unit_diagnostics(model.m, model.n, cfg)
    else:
        Z = build_scatter_matrix(history.innovation, reg.innovation,
                                 history.prediction, pred.mean)
        diag = compute_diagnostics(Z, cfg)
    pw = prewhiten(reg)
    x0, _ = least_squares(pw.C, pw.y)
    est = gm_solve(pw, diag, x0, cfg)
    est.prediction = pred
    return est, FilterHistory(reg.innovation, pred.mean.copy())
