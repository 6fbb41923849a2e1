"""Discrete-time nonlinear dynamical systems.

A model is the pair of maps

    x_k = f(x_{k-1}, u_k) + w_k
    z_k = h(x_k, u_k) + v_k

together with the process and observation noise covariances ``Q`` and ``R``.
Both ``f`` and ``h`` are vectorized over a leading axis, so a whole sigma-point
set of shape ``(N, n)`` can be propagated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError

SWING_CHANNELS = ("Pe", "Qe", "delta", "omega")


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


def _check_covariance(M, name, definite=False):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ContractError(f"{name} must be symmetric")
    eig = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
    floor = -1e-12 * max(1.0, np.abs(eig).max(initial=0.0))
    if definite and np.any(eig <= 0.0):
        raise ContractError(f"{name} must be positive definite")
    if np.any(eig < floor):
        raise ContractError(f"{name} must be positive semi-definite")


class DynamicModel:
    """Base class for models; subclasses provide ``n``, ``m``, ``Q``, ``R``, ``f``, ``h``."""

    n: int
    m: int
    Q: np.ndarray
    R: np.ndarray

    def f(self, x: np.ndarray, u: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError

    def h(self, x: np.ndarray, u: Optional[np.ndarray] = None) -> np.ndarray:
        raise NotImplementedError

    def _validate_noise(self):
        _check_covariance(self.Q, "Q")
        _check_covariance(self.R, "R", definite=True)
        if self.Q.shape != (self.n, self.n):
            raise ContractError(f"Q must be {self.n}x{self.n}, got {self.Q.shape}")
        if self.R.shape != (self.m, self.m):
            raise ContractError(f"R must be {self.m}x{self.m}, got {self.R.shape}")


@dataclass(frozen=True, eq=False)
class LinearModel(DynamicModel):
    """Linear-Gaussian model ``f(x) = A x``, ``h(x) = C_obs x``."""

    A: np.ndarray
    C_obs: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A, 2))
        object.__setattr__(self, "C_obs", _frozen(self.C_obs, 2))
        object.__setattr__(self, "Q", _frozen(self.Q, 2))
        object.__setattr__(self, "R", _frozen(self.R, 2))
        if self.A.shape[0] != self.A.shape[1]:
            raise ContractError(f"A must be square, got {self.A.shape}")
        if self.C_obs.shape[1] != self.A.shape[0]:
            raise ContractError("C_obs must have as many columns as A has rows")
        self._validate_noise()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C_obs.shape[0]

    def f(self, x, u=None):
        return np.asarray(x, dtype=float) @ self.A.T

    def h(self, x, u=None):
        return np.asarray(x, dtype=float) @ self.C_obs.T


@dataclass(frozen=True, eq=False)
class SwingModel(DynamicModel):
    """Single machine against an infinite bus, classical (2-state) model.

    The state is ``(delta, omega)``: rotor angle in radians and per-unit speed.
    The continuous dynamics

        d(delta)/dt = omega_s * (omega - 1)
        d(omega)/dt = (Pm - Pe - D * (omega - 1)) / (2 H)

    with ``Pe = E' V / X * sin(delta)`` are integrated over one step ``dt``
    with classical fixed-step RK4. The angle is not wrapped.

    ``channels`` selects the measured quantities, in order. The default
    ``("Pe", "omega")`` is the two-channel set; ``"Qe"`` (reactive power
    ``(E' V cos(delta) - V^2) / X``) and ``"delta"`` are also available, and a
    name may repeat to model redundant meters.
    """

    H: float = 3.0
    D: float = 2.0
    Pm: float = 0.8
    E: float = 1.05
    V: float = 1.0
    X: float = 0.5
    omega_s: float = 2.0 * np.pi * 60.0
    dt: float = 0.01
    Q: np.ndarray = None
    R: np.ndarray = None
    channels: Tuple[str, ...] = ("Pe", "omega")

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        unknown = [c for c in self.channels if c not in SWING_CHANNELS]
        if unknown or not self.channels:
            raise ContractError(f"unknown measurement channels {unknown}; choose from {SWING_CHANNELS}")
        for name in ("H", "X", "dt", "omega_s"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.D < 0:
            raise ContractError("D must be non-negative")
        Q = np.zeros((2, 2)) if self.Q is None else self.Q
        R = np.eye(self.m) * 1e-4 if self.R is None else self.R
        object.__setattr__(self, "Q", _frozen(Q, 2))
        object.__setattr__(self, "R", _frozen(R, 2))
        self._validate_noise()

    n = 2

    @property
    def m(self) -> int:
        return len(self.channels)

    @property
    def Pmax(self) -> float:
        return self.E * self.V / self.X

    def equilibrium(self) -> np.ndarray:
        """Stable operating point ``(arcsin(Pm / Pmax), 1)``."""
        if abs(self.Pm) > self.Pmax:
            raise ContractError("no equilibrium: Pm exceeds the transfer limit")
        return np.array([np.arcsin(self.Pm / self.Pmax), 1.0])

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        delta, omega = x[..., 0], x[..., 1]
        slip = omega - 1.0
        out = np.empty(x.shape)
        out[..., 0] = self.omega_s * slip
        out[..., 1] = (self.Pm - self.Pmax * np.sin(delta) - self.D * slip) / (2.0 * self.H)
        return out

    def f(self, x, u=None):
        x = np.asarray(x, dtype=float)
        dt = self.dt
        k1 = self.derivative(x)
        k2 = self.derivative(x + 0.5 * dt * k1)
        k3 = self.derivative(x + 0.5 * dt * k2)
        k4 = self.derivative(x + dt * k3)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def h(self, x, u=None):
        x = np.asarray(x, dtype=float)
        delta, omega = x[..., 0], x[..., 1]
        values = {}
        out = np.empty(x.shape[:-1] + (len(self.channels),))
        for j, name in enumerate(self.channels):
            if name not in values:
                if name == "Pe":
                    values[name] = self.Pmax * np.sin(delta)
                elif name == "Qe":
                    values[name] = (self.E * self.V * np.cos(delta) - self.V ** 2) / self.X
                elif name == "delta":
                    values[name] = delta
                else:
                    values[name] = omega
            out[..., j] = values[name]
        return out


def _as_vector(a, size, name):
    v = np.asarray(a, dtype=float)
    if v.ndim != 1 or v.shape[0] != size:
        raise ContractError(f"{name} must be a vector of length {size}, got shape {v.shape}")
    return v


def step_truth(model: DynamicModel, x, u=None, w=None) -> np.ndarray:
    """Advance the true state one step: ``f(x, u) + w``."""
    x = _as_vector(x, model.n, "x")
    w = np.zeros(model.n) if w is None else _as_vector(w, model.n, "w")
    return model.f(x, u) + w


def observe(model: DynamicModel, x, u=None, v=None) -> np.ndarray:
    """Measure a state: ``h(x, u) + v``."""
    x = _as_vector(x, model.n, "x")
    v = np.zeros(model.m) if v is None else _as_vector(v, model.m, "v")
    return model.h(x, u) + v
