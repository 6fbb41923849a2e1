import numpy as np
import pytest


def kalman_filter(A, C, Q, R, mean, cov, measurements):
    """Textbook linear Kalman filter; returns the filtered means."""
    x, P = np.asarray(mean, float), np.asarray(cov, float)
    out = []
    for z in measurements:
        x = A @ x
        P = A @ P @ A.T + Q
        S = C @ P @ C.T + R
        K = np.linalg.solve(S, C @ P).T
        x = x + K @ (z - C @ x)
        P = P - K @ S @ K.T
        out.append(x)
    return np.array(out)


@pytest.fixture
def kalman():
    return kalman_filter


LINEAR_RAW = {
    "model": {"kind": "linear", "A": [[1.0, 0.1], [0.0, 0.95]],
              "C_obs": [[1.0, 0.0], [0.5, 1.0], [0.0, 1.0]], "Q": [[1e-3, 2e-4], [2e-4, 1e-2]]},
    "horizon": 500,
    "initial": {"mean": [0.0, 1.0], "cov": [[1.0, 0.1], [0.1, 0.5]]},
    "noise": {"measurement": [{"kind": "gaussian", "sigma": 0.2}, {"kind": "gaussian", "sigma": 0.1},
                              {"kind": "gaussian", "sigma": 0.3}]},
    "filters": {"ukf": True, "gmukf": False},
    "seed": 12,
}
