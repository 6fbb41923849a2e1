"""Noise generators and outlier injection for simulations.

Supported marginal laws: Gaussian, a two-component Gaussian mixture (shifted
to zero mean), Laplace and Cauchy. Laplace and Cauchy are drawn by inverse
CDF from uniforms so that draws are reproducible per stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import ConfigError

KINDS = ("gaussian", "mixture", "laplace", "cauchy")

# robust pseudo standard deviation of a Cauchy law, in units of its scale
CAUCHY_PSEUDO_SIGMA = 2.2


@dataclass(frozen=True)
class NoiseSpec:
    """A zero-centered scalar noise law.

    Parameters by kind: ``gaussian(sigma)``; ``mixture(w1, mu1, sigma1, mu2,
    sigma2)``; ``laplace(b)``; ``cauchy(gamma)``.
    """

    kind: str
    sigma: float = 0.0
    w1: float = 0.5
    mu1: float = 0.0
    sigma1: float = 0.0
    mu2: float = 0.0
    sigma2: float = 0.0
    b: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; choose from {KINDS}", "kind")
        required = {"gaussian": ("sigma",), "mixture": ("sigma1", "sigma2"),
                    "laplace": ("b",), "cauchy": ("gamma",)}[self.kind]
        for name in required:
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        if self.kind == "mixture" and not 0.0 < self.w1 < 1.0:
            raise ConfigError("must lie in (0, 1)", "w1")

    @classmethod
    def gaussian(cls, sigma):
        return cls("gaussian", sigma=sigma)

    @classmethod
    def mixture(cls, w1, mu1, sigma1, mu2, sigma2):
        return cls("mixture", w1=w1, mu1=mu1, sigma1=sigma1, mu2=mu2, sigma2=sigma2)

    @classmethod
    def laplace(cls, b):
        return cls("laplace", b=b)

    @classmethod
    def cauchy(cls, gamma):
        return cls("cauchy", gamma=gamma)

    @property
    def mixture_offset(self) -> float:
        return self.w1 * self.mu1 + (1.0 - self.w1) * self.mu2

    @property
    def variance(self) -> float:
        """Analytic variance; the Cauchy law gets ``(2.2 gamma)^2`` instead."""
        if self.kind == "gaussian":
            return self.sigma ** 2
        if self.kind == "laplace":
            return 2.0 * self.b ** 2
        if self.kind == "cauchy":
            return (CAUCHY_PSEUDO_SIGMA * self.gamma) ** 2
        w1, w2 = self.w1, 1.0 - self.w1
        mean = self.mixture_offset
        second = w1 * (self.sigma1 ** 2 + self.mu1 ** 2) + w2 * (self.sigma2 ** 2 + self.mu2 ** 2)
        return second - mean ** 2


def inverse_cdf(spec: NoiseSpec, u):
    """Quantile function for the Laplace and Cauchy laws."""
    u = np.asarray(u, dtype=float)
    if spec.kind == "laplace":
        c = u - 0.5
        return -spec.b * np.sign(c) * np.log1p(-2.0 * np.abs(c))
    if spec.kind == "cauchy":
        return spec.gamma * np.tan(np.pi * (u - 0.5))
    raise ValueError(f"no closed-form inverse CDF sampler for {spec.kind!r}")


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None):
    if spec.kind == "gaussian":
        return rng.normal(0.0, spec.sigma, size)
    if spec.kind in ("laplace", "cauchy"):
        return inverse_cdf(spec, rng.random(size))
    first = rng.random(size) < spec.w1
    mu = np.where(first, spec.mu1, spec.mu2)
    sd = np.where(first, spec.sigma1, spec.sigma2)
    draw = mu + sd * rng.standard_normal(size) - spec.mixture_offset
    return draw if size is not None else float(draw)


def nominal_R(specs: Sequence[NoiseSpec]) -> np.ndarray:
    """Diagonal observation covariance implied by per-channel specs."""
    return np.diag([s.variance for s in specs])


# --------------------------------------------------------------------------
# Outliers
# --------------------------------------------------------------------------

OBSERVATION = "observation"
INNOVATION = "innovation"


@dataclass(frozen=True)
class OutlierEvent:
    """Gross error starting at ``step`` (1-based) for ``duration`` steps.

    ``target`` is ``"observation"`` (``index`` is a measurement channel) or
    ``"innovation"`` (``index`` is a state component whose process noise gets
    an impulse). ``magnitude`` is in multiples of the nominal standard deviation.
    """

    step: int
    target: str
    index: int
    magnitude: float
    duration: int = 1

    def steps(self):
        return range(self.step, self.step + self.duration)


@dataclass
class OutlierSchedule:
    events: List[OutlierEvent] = field(default_factory=list)

    def validate(self, horizon: int, m: int, n: int, path: str = "outliers"):
        for i, ev in enumerate(self.events):
            where = f"{path}.events[{i}]"
            if ev.target not in (OBSERVATION, INNOVATION):
                raise ConfigError(f"unknown target {ev.target!r}", f"{where}.target")
            bound = m if ev.target == OBSERVATION else n
            if not 0 <= ev.index < bound:
                raise ConfigError(f"index {ev.index} out of range [0, {bound})", f"{where}.index")
            if ev.duration < 1:
                raise ConfigError("must be >= 1", f"{where}.duration")
            if ev.step < 1 or ev.step + ev.duration - 1 > horizon:
                raise ConfigError(f"steps {ev.step}..{ev.step + ev.duration - 1} outside 1..{horizon}",
                                  f"{where}.step")

    def observation_cells(self):
        """Set of ``(step, channel)`` pairs carrying observation outliers."""
        return {(k, ev.index) for ev in self.events if ev.target == OBSERVATION for k in ev.steps()}


def random_schedule(rng: np.random.Generator, horizon: int, fraction: float, target: str,
                    indices: Sequence[int], magnitude: float,
                    first_step: int = 1) -> OutlierSchedule:
    """Single-step events at ``round(fraction * horizon)`` distinct random steps.

    Each event hits one index drawn uniformly from ``indices``.
    """
    candidates = np.arange(first_step, horizon + 1)
    count = int(round(fraction * horizon))
    steps = np.sort(rng.choice(candidates, size=min(count, candidates.size), replace=False))
    picks = rng.choice(np.asarray(indices), size=steps.size)
    return OutlierSchedule([OutlierEvent(int(k), target, int(i), float(magnitude))
                            for k, i in zip(steps, picks)])


@dataclass
class NoiseTrace:
    """Per-step noise draws, row ``k-1`` belonging to step ``k``."""

    process: np.ndarray
    measurement: np.ndarray

    def copy(self):
        return NoiseTrace(self.process.copy(), self.measurement.copy())


def apply_outliers(trace: NoiseTrace, schedule: OutlierSchedule,
                   obs_sigma: Sequence[float], proc_sigma: Sequence[float]) -> NoiseTrace:
    """Return a corrupted copy of ``trace``.

    Observation events add ``magnitude * obs_sigma[index]`` to the measurement
    noise; innovation events add ``magnitude * proc_sigma[index]`` to the
    process noise, which then propagates through the true state.
    """
    out = trace.copy()
    for ev in schedule.events:
        rows = np.arange(ev.step - 1, ev.step - 1 + ev.duration)
        if ev.target == OBSERVATION:
            out.measurement[rows, ev.index] += ev.magnitude * obs_sigma[ev.index]
        else:
            out.process[rows, ev.index] += ev.magnitude * proc_sigma[ev.index]
    return out
