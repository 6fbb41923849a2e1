import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmukf.errors import RankDeficiencyError, SingularCovarianceError
from gmukf.models import LinearModel, SwingModel
from gmukf.regression import (BatchRegression, PrewhitenedRegression, build_batch_regression,
                              least_squares, prewhiten, wls_solve)
from gmukf.unscented import GaussianBelief, ukf_update


def manual_regression(z_tilde, H_tilde, W):
    """Batch regression with only the fields prewhiten/wls_solve need."""
    S = np.linalg.cholesky(W)
    n = H_tilde.shape[1]
    m = H_tilde.shape[0] - n
    return BatchRegression(z_tilde=np.asarray(z_tilde, float), H_tilde=np.asarray(H_tilde, float),
                           W=W, S=S, H=H_tilde[:m], Sigma=W[:m, :m], R_tilde=np.zeros((m, m)),
                           x_pred=np.zeros(n), innovation=np.zeros(m))


def random_swing_case(rng):
    model = SwingModel(channels=("Pe", "Qe", "omega"), R=np.diag([1e-3, 2e-3, 1e-5]))
    A = rng.standard_normal((2, 2))
    P = (A @ A.T + 0.1 * np.eye(2)) * 10 ** rng.uniform(-4, -2)
    pred = GaussianBelief([rng.uniform(0.2, 1.0), 1.0 + 1e-3 * rng.standard_normal()], P)
    z = model.h(pred.mean) + np.sqrt(np.diag(model.R)) * rng.standard_normal(3) * 3
    return model, pred, z


class TestBuild:
    def test_linear_gain_is_exact(self):
        C = np.array([[1.0, 0.5], [0.0, 2.0], [1.0, 1.0]])
        model = LinearModel(np.eye(2), C, np.zeros((2, 2)), np.diag([1.0, 2.0, 3.0]))
        pred = GaussianBelief([1.0, -1.0], [[0.5, 0.1], [0.1, 0.3]])
        reg = build_batch_regression(pred, model, [0.0, 0.0, 0.0])
        np.testing.assert_allclose(reg.H, C, atol=1e-10)
        np.testing.assert_allclose(reg.R_tilde, 0.0, atol=1e-10)

    def test_structure(self):
        rng = np.random.default_rng(1)
        model, pred, z = random_swing_case(rng)
        reg = build_batch_regression(pred, model, z)
        m, n = 3, 2
        assert reg.z_tilde.shape == (m + n,) and reg.H_tilde.shape == (m + n, n)
        np.testing.assert_array_equal(reg.W[:m, m:], 0.0)
        np.testing.assert_array_equal(reg.W[m:, :m], 0.0)
        np.testing.assert_allclose(reg.W[m:, m:], pred.cov)
        np.testing.assert_allclose(reg.S @ reg.S.T, reg.W, atol=1e-10)
        np.testing.assert_array_equal(reg.H_tilde[m:], np.eye(n))
        np.testing.assert_array_equal(reg.z_tilde[m:], pred.mean)

    def test_gain_against_straight_line_moments(self):
        model = SwingModel(channels=("Pe", "Qe", "omega"))
        pred = GaussianBelief([0.6, 1.002], [[4e-4, 1e-6], [1e-6, 2e-6]])
        L = np.linalg.cholesky(2 * pred.cov)
        pts = [pred.mean + L[:, 0], pred.mean + L[:, 1], pred.mean - L[:, 0], pred.mean - L[:, 1]]
        zs = [model.h(p) for p in pts]
        zbar = sum(zs) / 4
        Pxz = sum(np.outer(p - pred.mean, zz - zbar) for p, zz in zip(pts, zs)) / 4
        H = Pxz.T @ np.linalg.inv(pred.cov)
        reg = build_batch_regression(pred, model, zbar)
        np.testing.assert_allclose(reg.H, H, rtol=1e-9, atol=1e-12)

    def test_innovation_is_point_evaluated(self):
        rng = np.random.default_rng(2)
        model, pred, z = random_swing_case(rng)
        reg = build_batch_regression(pred, model, z)
        np.testing.assert_allclose(reg.innovation, z - model.h(pred.mean), atol=1e-15)

    def test_singular_prediction(self):
        model = SwingModel()
        pred = GaussianBelief([0.5, 1.0], [[1e-4, 0.0], [0.0, 0.0]])
        with pytest.raises(SingularCovarianceError):
            build_batch_regression(pred, model, [1.0, 1.0])


class TestPrewhiten:
    def test_identity(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        reg = manual_regression([1.0, 2.0, 3.0], H, np.eye(3))
        pw = prewhiten(reg)
        np.testing.assert_array_equal(pw.y, reg.z_tilde)
        np.testing.assert_array_equal(pw.C, H)

    def test_scaled_identity(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        reg = manual_regression([1.0, 2.0, 3.0], H, 4 * np.eye(3))
        pw = prewhiten(reg)
        np.testing.assert_allclose(pw.y, reg.z_tilde / 2, rtol=1e-15)
        np.testing.assert_allclose(pw.C, H / 2, rtol=1e-15)

    def test_random_definitional(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((5, 5))
        W = A @ A.T + np.eye(5)
        H = rng.standard_normal((5, 2))
        reg = manual_regression(rng.standard_normal(5), H, W)
        pw = prewhiten(reg)
        np.testing.assert_allclose(reg.S @ pw.C, H, atol=1e-10)
        np.testing.assert_allclose(reg.S @ pw.y, reg.z_tilde, atol=1e-10)

    def test_whitened_residual_calibration(self):
        rng = np.random.default_rng(4)
        model, pred, z = random_swing_case(rng)
        reg = build_batch_regression(pred, model, z)
        pw = prewhiten(reg)
        x_true = np.array([0.4, 1.0])
        errs = rng.multivariate_normal(np.zeros(5), reg.W, size=10_000)
        resid = np.array([np.linalg.solve(reg.S, reg.H_tilde @ x_true + e) for e in errs]) - pw.C @ x_true
        cov = np.cov(resid.T)
        assert np.linalg.norm(cov - np.eye(5)) / np.linalg.norm(np.eye(5)) < 0.10

    def test_measurement_reordering(self):
        rng = np.random.default_rng(5)
        model, pred, z = random_swing_case(rng)
        perm = [2, 0, 1]
        permuted = SwingModel(channels=tuple(model.channels[i] for i in perm),
                              R=model.R[np.ix_(perm, perm)])
        a = prewhiten(build_batch_regression(pred, model, z))
        b = prewhiten(build_batch_regression(pred, permuted, z[perm]))
        # Whitening mixes rows within the measurement block, so compare the
        # invariant quantities: the WLS estimate and covariance.
        xa, Pa = least_squares(a.C, a.y)
        xb, Pb = least_squares(b.C, b.y)
        np.testing.assert_allclose(xa, xb, rtol=1e-10)
        np.testing.assert_allclose(Pa, Pb, rtol=1e-8)


class TestWLS:
    def test_averaging(self):
        reg = manual_regression([1.0, 3.0, 5.0, 7.0], np.vstack([np.eye(2), np.eye(2)]), np.eye(4))
        x, _ = wls_solve(reg)
        np.testing.assert_allclose(x, [3.0, 5.0], rtol=1e-14)

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(6)
        C = rng.standard_normal((3, 2))
        y = rng.standard_normal(3)
        x, cov = least_squares(C, y)
        np.testing.assert_allclose(x, np.linalg.solve(C.T @ C, C.T @ y), atol=1e-10)
        np.testing.assert_allclose(cov, np.linalg.inv(C.T @ C), atol=1e-10)

    def test_accepts_prewhitened(self):
        C = np.array([[1.0], [1.0]])
        x, _ = wls_solve(PrewhitenedRegression(np.array([1.0, 2.0]), C, 1))
        np.testing.assert_allclose(x, [1.5])

    def test_rank_deficient(self):
        with pytest.raises(RankDeficiencyError):
            least_squares(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), np.ones(3))

    def test_matches_ukf_update(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            model, pred, z = random_swing_case(rng)
            x, P = wls_solve(build_batch_regression(pred, model, z))
            post = ukf_update(pred, model, z)
            np.testing.assert_allclose(x, post.mean, rtol=1e-8)
            np.testing.assert_allclose(P, post.cov, rtol=1e-8, atol=1e-8 * np.abs(post.cov).max())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_whitening_roundtrip(seed):
    rng = np.random.default_rng(seed)
    model, pred, z = random_swing_case(rng)
    reg = build_batch_regression(pred, model, z)
    pw = prewhiten(reg)
    scale = np.abs(reg.H_tilde).max()
    np.testing.assert_allclose(reg.S @ pw.C, reg.H_tilde, atol=1e-10 * scale)
