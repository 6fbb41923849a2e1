import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmukf.errors import SingularCovarianceError, SingularInnovationError
from gmukf.models import LinearModel, SwingModel
from gmukf.unscented import (GaussianBelief, SigmaPointSet, cholesky_jittered,
                             generate_sigma_points, predict_measurement, statistical_linearize,
                             ukf_predict, ukf_update, unscented_transform)


def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T + floor * np.eye(n)


class TestSigmaPoints:
    def test_identity_2d(self):
        pts = generate_sigma_points(GaussianBelief([0.0, 0.0], np.eye(2)))
        r2 = np.sqrt(2.0)
        expected = {(r2, 0.0), (0.0, r2), (-r2, 0.0), (0.0, -r2)}
        got = {tuple(np.round(p, 14)) for p in pts.points}
        assert got == {tuple(np.round(e, 14)) for e in expected}
        np.testing.assert_array_equal(pts.weights, [0.25] * 4)

    def test_scalar(self):
        pts = generate_sigma_points(GaussianBelief([5.0], [[4.0]]))
        assert sorted(pts.points[:, 0]) == [3.0, 7.0]
        np.testing.assert_array_equal(pts.weights, [0.5, 0.5])

    def test_reconstruction_example(self):
        P = np.array([[2.0, 1.0], [1.0, 2.0]])
        pts = generate_sigma_points(GaussianBelief([1.0, 1.0], P))
        np.testing.assert_allclose(pts.mean, [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(pts.scatter, P, atol=1e-10)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(0)
        for i in range(1000):
            n = (1, 2, 4)[i % 3]
            mean = rng.standard_normal(n)
            P = random_spd(rng, n)
            pts = generate_sigma_points(GaussianBelief(mean, P))
            assert pts.points.shape == (2 * n, n)
            np.testing.assert_allclose(pts.weights.sum(), 1.0, rtol=0, atol=1e-15)
            np.testing.assert_allclose(pts.mean, mean, atol=1e-9)
            np.testing.assert_allclose(pts.scatter, P, atol=1e-9)

    def test_jitter_rescues_semidefinite(self):
        P = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = cholesky_jittered(P)
        np.testing.assert_allclose(L @ L.T, P, atol=1e-6)

    def test_indefinite_fails(self):
        with pytest.raises(SingularCovarianceError):
            generate_sigma_points(GaussianBelief([0.0, 0.0], np.diag([1.0, -1.0])))


class TestUnscentedTransform:
    def test_identity(self):
        P = np.array([[2.0, 0.3], [0.3, 1.0]])
        pts = generate_sigma_points(GaussianBelief([1.0, -2.0], P))
        mean, cov, cross = unscented_transform(pts, lambda X: X)
        np.testing.assert_allclose(mean, [1.0, -2.0], atol=1e-12)
        np.testing.assert_allclose(cov, P, atol=1e-12)
        np.testing.assert_allclose(cross, P, atol=1e-12)

    def test_linear_map_exact(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((3, 2))
        P, Radd = random_spd(rng, 2), random_spd(rng, 3)
        x = rng.standard_normal(2)
        pts = generate_sigma_points(GaussianBelief(x, P))
        mean, cov, _ = unscented_transform(pts, lambda X: X @ M.T, Radd)
        np.testing.assert_allclose(mean, M @ x, atol=1e-12)
        np.testing.assert_allclose(cov, M @ P @ M.T + Radd, atol=1e-12)

    def test_quadratic_matches_statistical_linearization(self):
        g = lambda X: np.column_stack([X[:, 0] ** 2, X[:, 1]])
        pts = generate_sigma_points(GaussianBelief([0.0, 0.0], np.eye(2)))
        mean, cov, _ = unscented_transform(pts, g)
        sl_mean, sl_cov = statistical_linearize(pts, g).posterior(pts)
        np.testing.assert_allclose(sl_mean, mean, atol=1e-10)
        np.testing.assert_allclose(sl_cov, cov, atol=1e-10)

    def test_symmetric_output(self):
        rng = np.random.default_rng(4)
        pts = generate_sigma_points(GaussianBelief(rng.standard_normal(4), random_spd(rng, 4)))
        _, cov, _ = unscented_transform(pts, np.sin)
        np.testing.assert_allclose(cov, cov.T, atol=1e-12, rtol=0)


class TestStatisticalLinearization:
    def test_affine_is_exact(self):
        rng = np.random.default_rng(5)
        M, c = rng.standard_normal((2, 3)), rng.standard_normal(2)
        pts = generate_sigma_points(GaussianBelief(rng.standard_normal(3), random_spd(rng, 3)))
        sl = statistical_linearize(pts, lambda X: X @ M.T + c)
        np.testing.assert_allclose(sl.A, M, atol=1e-10)
        np.testing.assert_allclose(sl.b, c, atol=1e-10)
        np.testing.assert_allclose(sl.P_zeta, 0.0, atol=1e-10)

    def test_sine_against_straight_line_formulas(self):
        # Sigma points of N(0, 1) are +/-1; the formulas evaluated by hand over
        # those two points give A = sin(1), b = 0, P_zeta = 0.
        pts = generate_sigma_points(GaussianBelief([0.0], [[1.0]]))
        sl = statistical_linearize(pts, np.sin)
        np.testing.assert_allclose(sl.A, [[0.8414709848078965]], atol=1e-14)
        np.testing.assert_allclose(sl.b, [0.0], atol=1e-14)
        np.testing.assert_allclose(sl.P_zeta, [[0.0]], atol=1e-14)

    def test_singular_scatter(self):
        pts = SigmaPointSet(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]),
                            np.full(4, 0.25))
        with pytest.raises(SingularCovarianceError):
            statistical_linearize(pts, lambda X: X)

    def test_p_zeta_psd(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            pts = generate_sigma_points(GaussianBelief(rng.standard_normal(2), random_spd(rng, 2)))
            sl = statistical_linearize(pts, lambda X: np.column_stack([np.cos(X[:, 0]), X[:, 1] ** 3]))
            assert np.linalg.eigvalsh(sl.P_zeta).min() >= -1e-10


class TestPredictUpdate:
    def linear(self):
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        return LinearModel(A, [[1.0, 0.0]], np.diag([1e-3, 1e-2]), [[0.25]])

    def test_linear_predict(self):
        model = self.linear()
        b = GaussianBelief([1.0, 2.0], [[1.0, 0.2], [0.2, 0.5]])
        pred = ukf_predict(b, model)
        np.testing.assert_allclose(pred.mean, model.A @ b.mean, atol=1e-10)
        np.testing.assert_allclose(pred.cov, model.A @ b.cov @ model.A.T + model.Q, atol=1e-10)

    def test_swing_equilibrium_predict(self):
        model = SwingModel()
        eq = model.equilibrium()
        pred = ukf_predict(GaussianBelief(eq, np.diag([1e-10, 1e-12])), model)
        np.testing.assert_allclose(pred.mean, eq, atol=1e-10)

    def test_swing_predict_against_loop(self):
        model = SwingModel(Q=np.diag([1e-6, 1e-8]))
        b = GaussianBelief([0.6, 1.001], [[1e-3, 1e-5], [1e-5, 1e-5]])
        L = np.linalg.cholesky(2 * b.cov)
        points = [b.mean + L[:, i] for i in range(2)] + [b.mean - L[:, i] for i in range(2)]
        images = [model.f(p) for p in points]
        mean = sum(images) / 4.0
        np.testing.assert_allclose(ukf_predict(b, model).mean, mean, atol=1e-14)

    def test_linear_update_matches_kalman(self):
        model = self.linear()
        pred = GaussianBelief([1.0, 2.0], [[1.0, 0.2], [0.2, 0.5]])
        z = np.array([1.7])
        C, R = model.C_obs, model.R
        S = C @ pred.cov @ C.T + R
        K = pred.cov @ C.T @ np.linalg.inv(S)
        mean = pred.mean + K @ (z - C @ pred.mean)
        cov = (np.eye(2) - K @ C) @ pred.cov
        post = ukf_update(pred, model, z)
        np.testing.assert_allclose(post.mean, mean, rtol=1e-8)
        np.testing.assert_allclose(post.cov, cov, rtol=1e-8)

    def test_zero_innovation_keeps_mean(self):
        model = SwingModel(R=np.diag([1e-4, 1e-6]))
        pred = GaussianBelief([0.5, 1.0], np.diag([1e-3, 1e-5]))
        z_hat = predict_measurement(pred, model).z_hat
        np.testing.assert_allclose(ukf_update(pred, model, z_hat).mean, pred.mean, atol=1e-15)

    def test_singular_innovation(self):
        model = LinearModel(np.eye(1), [[1.0]], np.zeros((1, 1)), [[1.0]])
        pred = GaussianBelief([0.0], [[1.0]])
        bad = LinearModel.__new__(LinearModel)
        object.__setattr__(bad, "A", model.A)
        object.__setattr__(bad, "C_obs", np.zeros((1, 1)))
        object.__setattr__(bad, "Q", model.Q)
        object.__setattr__(bad, "R", np.zeros((1, 1)))
        with pytest.raises(SingularInnovationError):
            ukf_update(pred, bad, [0.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_update_never_inflates(seed):
    rng = np.random.default_rng(seed)
    model = SwingModel(channels=("Pe", "Qe", "omega"), R=np.diag([1e-3, 1e-3, 1e-5]))
    P = random_spd(rng, 2, floor=1e-4) * 1e-3
    pred = GaussianBelief([0.5 + 0.1 * rng.standard_normal(), 1.0], P)
    post = ukf_update(pred, model, model.h(pred.mean) + 0.01 * rng.standard_normal(3))
    assert np.linalg.eigvalsh(pred.cov - post.cov).min() >= -1e-10
    np.testing.assert_allclose(post.cov, post.cov.T, atol=1e-12, rtol=0)
