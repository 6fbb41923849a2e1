"""Experiment configuration: YAML file -> validated ``ExperimentConfig``.

The file is a YAML mapping; see ``configs/`` in the repository for complete
examples and ``SCHEMA`` below for every accepted key. Structural problems are
reported by JSON-schema validation, semantic ones (dimensions, ranges) by
``ConfigError``; both carry a dotted path to the offending field.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import jsonschema
import numpy as np
import yaml

from ..errors import ConfigError, ContractError
from ..models import SWING_CHANNELS, DynamicModel, LinearModel, SwingModel
from ..noise import INNOVATION, OBSERVATION, NoiseSpec, OutlierEvent, OutlierSchedule, nominal_R
from ..robust import GMConfig
from ..unscented import GaussianBelief

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_state = {"oneOf": [{"const": "equilibrium"}, _vec]}

_noise = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["gaussian", "mixture", "laplace", "cauchy"]},
        "sigma": _pos, "w1": _num, "mu1": _num, "sigma1": _pos, "mu2": _num,
        "sigma2": _pos, "b": _pos, "gamma": _pos,
    },
}

_event = {
    "type": "object",
    "required": ["step", "target", "index", "magnitude"],
    "additionalProperties": False,
    "properties": {
        "step": {"type": "integer"},
        "target": {"enum": [OBSERVATION, INNOVATION]},
        "index": {"type": "integer", "minimum": 0},
        "magnitude": _num,
        "duration": {"type": "integer", "minimum": 1},
    },
}

_random_events = {
    "type": "object",
    "required": ["target", "fraction", "magnitude"],
    "additionalProperties": False,
    "properties": {
        "target": {"enum": [OBSERVATION, INNOVATION]},
        "fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "indices": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "magnitude": _num,
        "first_step": {"type": "integer", "minimum": 1},
    },
}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["model", "horizon", "initial", "noise"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["swing", "linear"]},
                "H": _pos, "D": {"type": "number", "minimum": 0}, "Pm": _num, "E": _pos,
                "V": _pos, "X": _pos, "omega_s": _pos,
                "channels": {"type": "array", "items": {"enum": list(SWING_CHANNELS)}, "minItems": 1},
                "A": _mat, "C_obs": _mat,
                "Q": _mat, "q_diag": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "dt": _pos,
        "horizon": {"type": "integer", "minimum": 2},
        "initial": {
            "type": "object",
            "required": ["mean"],
            "additionalProperties": False,
            "properties": {
                "mean": _state,
                "cov": _mat,
                "cov_diag": {"type": "array", "items": _pos},
                "truth": _state,
            },
        },
        "noise": {
            "type": "object",
            "required": ["measurement"],
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "measurement": {"oneOf": [_noise, {"type": "array", "items": _noise, "minItems": 1}]},
            },
        },
        "outliers": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "events": {"type": "array", "items": _event},
                "random": {"type": "array", "items": _random_events},
            },
        },
        "filters": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ukf": {"type": "boolean"},
                "gmukf": {
                    "oneOf": [
                        {"type": "boolean"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "lambda": _pos, "d": _pos,
                                "eta_df": {"type": "integer", "minimum": 1},
                                "eta_quantile": {"type": "number", "exclusiveMinimum": 0,
                                                 "exclusiveMaximum": 1},
                                "irls_tol": _pos,
                                "irls_max_iter": {"type": "integer", "minimum": 1},
                                "b_m": _pos,
                                "force_unit_weights": {"type": "boolean"},
                            },
                        },
                    ]
                },
            },
        },
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "traces": {"type": "boolean"}},
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_rmse_ratio": _pos,
                "min_detection_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "max_rmse": _pos,
                "min_irls_convergence": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


@dataclass
class RandomEvents:
    target: str
    fraction: float
    indices: List[int]
    magnitude: float
    first_step: int = 1


@dataclass
class ExperimentConfig:
    raw: Dict[str, Any]
    model: DynamicModel
    dt: float
    horizon: int
    initial: GaussianBelief
    truth0: np.ndarray
    measurement_noise: List[NoiseSpec]
    noise_enabled: bool = True
    schedule: OutlierSchedule = field(default_factory=OutlierSchedule)
    random_events: List[RandomEvents] = field(default_factory=list)
    ukf: bool = True
    gmukf: Optional[GMConfig] = field(default_factory=GMConfig)
    replicates: int = 1
    seed: int = 0
    output_dir: str = "out"
    traces: bool = True
    checks: Dict[str, float] = field(default_factory=dict)

    @property
    def obs_sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.model.R))

    @property
    def proc_sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.model.Q))

    def with_overrides(self, seed=None, replicates=None, output_dir=None) -> "ExperimentConfig":
        out = copy.copy(self)
        out.raw = copy.deepcopy(self.raw)
        if seed is not None:
            out.seed = out.raw["seed"] = int(seed)
        if replicates is not None:
            if replicates < 1:
                raise ConfigError("must be >= 1", "replicates")
            out.replicates = out.raw["replicates"] = int(replicates)
        if output_dir is not None:
            out.output_dir = str(output_dir)
            out.raw.setdefault("output", {})["dir"] = str(output_dir)
        return out


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _state_vector(value, model, where):
    if isinstance(value, str):
        if not isinstance(model, SwingModel):
            raise ConfigError("'equilibrium' is only defined for the swing model", where)
        return model.equilibrium()
    v = np.asarray(value, dtype=float)
    if v.shape != (model.n,):
        raise ConfigError(f"expected {model.n} entries, got {v.size}", where)
    return v


def _noise_specs(raw, m) -> List[NoiseSpec]:
    entries = raw if isinstance(raw, list) else [raw] * m
    if len(entries) != m:
        raise ConfigError(f"expected {m} entries (one per channel), got {len(entries)}",
                          "noise.measurement")
    specs = []
    for i, e in enumerate(entries):
        try:
            specs.append(NoiseSpec(**e))
        except ConfigError as exc:
            raise ConfigError(exc.message, f"noise.measurement[{i}].{exc.path}") from exc
    return specs


def _process_cov(mraw, n):
    if "Q" in mraw:
        Q = np.asarray(mraw["Q"], dtype=float)
        if Q.shape != (n, n):
            raise ConfigError(f"expected a {n}x{n} matrix", "model.Q")
        return Q
    q = mraw.get("q_diag", [0.0] * n)
    if len(q) != n:
        raise ConfigError(f"expected {n} entries", "model.q_diag")
    return np.diag(np.asarray(q, dtype=float))


def parse_config(raw: Dict[str, Any]) -> ExperimentConfig:
    """Validate a config mapping and build the experiment objects."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        # descend into oneOf branches so the path names the offending leaf
        err = jsonschema.exceptions.best_match(errors[:1])
        raise ConfigError(err.message, _path(err.absolute_path) or "<root>")
    raw = copy.deepcopy(raw)
    mraw = raw["model"]
    dt = float(raw.get("dt", 0.01))

    if mraw["kind"] == "swing":
        extra = {k: mraw[k] for k in ("A", "C_obs") if k in mraw}
        if extra:
            raise ConfigError("not a swing-model parameter", f"model.{next(iter(extra))}")
        channels = tuple(mraw.get("channels", ("Pe", "omega")))
        specs = _noise_specs(raw["noise"]["measurement"], len(channels))
        params = {k: float(mraw[k]) for k in ("H", "D", "Pm", "E", "V", "X", "omega_s") if k in mraw}
        try:
            model = SwingModel(**params, dt=dt, Q=_process_cov(mraw, 2), R=nominal_R(specs),
                               channels=channels)
        except ContractError as exc:
            raise ConfigError(str(exc), "model") from exc
    else:
        for key in ("A", "C_obs"):
            if key not in mraw:
                raise ConfigError("required for the linear model", f"model.{key}")
        A = np.asarray(mraw["A"], dtype=float)
        C_obs = np.asarray(mraw["C_obs"], dtype=float)
        if A.ndim != 2 or C_obs.ndim != 2:
            raise ConfigError("matrix rows must have equal lengths", "model")
        specs = _noise_specs(raw["noise"]["measurement"], C_obs.shape[0])
        try:
            model = LinearModel(A, C_obs, _process_cov(mraw, A.shape[0]), nominal_R(specs))
        except ContractError as exc:
            raise ConfigError(str(exc), "model") from exc

    iraw = raw["initial"]
    mean = _state_vector(iraw["mean"], model, "initial.mean")
    if "cov" in iraw:
        cov = np.asarray(iraw["cov"], dtype=float)
        if cov.shape != (model.n, model.n):
            raise ConfigError(f"expected a {model.n}x{model.n} matrix", "initial.cov")
    elif "cov_diag" in iraw:
        if len(iraw["cov_diag"]) != model.n:
            raise ConfigError(f"expected {model.n} entries", "initial.cov_diag")
        cov = np.diag(iraw["cov_diag"])
    else:
        raise ConfigError("one of 'cov' or 'cov_diag' is required", "initial")
    if np.any(np.linalg.eigvalsh(0.5 * (cov + cov.T)) <= 0):
        raise ConfigError("initial covariance must be positive definite", "initial.cov")
    truth0 = _state_vector(iraw.get("truth", iraw["mean"]), model, "initial.truth")

    horizon = int(raw["horizon"])
    oraw = raw.get("outliers", {})
    schedule = OutlierSchedule([OutlierEvent(**e) for e in oraw.get("events", [])])
    schedule.validate(horizon, model.m, model.n, "outliers")
    random_events = []
    for i, r in enumerate(oraw.get("random", [])):
        bound = model.m if r["target"] == OBSERVATION else model.n
        indices = r.get("indices", list(range(bound)))
        if any(j >= bound for j in indices):
            raise ConfigError(f"indices must be below {bound}", f"outliers.random[{i}].indices")
        if r.get("first_step", 1) > horizon:
            raise ConfigError("beyond the horizon", f"outliers.random[{i}].first_step")
        random_events.append(RandomEvents(r["target"], float(r["fraction"]), list(indices),
                                          float(r["magnitude"]), int(r.get("first_step", 1))))

    fraw = raw.get("filters", {})
    gm_raw = fraw.get("gmukf", True)
    gm = None
    if gm_raw is not False:
        opts = {} if gm_raw is True else dict(gm_raw)
        if "lambda" in opts:
            opts["lam"] = opts.pop("lambda")
        try:
            gm = GMConfig(**opts)
        except ContractError as exc:
            raise ConfigError(str(exc), "filters.gmukf") from exc
    ukf = bool(fraw.get("ukf", True))
    if not ukf and gm is None:
        raise ConfigError("at least one filter must be enabled", "filters")

    out = raw.get("output", {})
    return ExperimentConfig(
        raw=raw, model=model, dt=dt, horizon=horizon,
        initial=GaussianBelief(mean, cov), truth0=truth0,
        measurement_noise=specs, noise_enabled=bool(raw["noise"].get("enabled", True)),
        schedule=schedule, random_events=random_events, ukf=ukf, gmukf=gm,
        replicates=int(raw.get("replicates", 1)), seed=int(raw.get("seed", 0)),
        output_dir=str(out.get("dir", "out")), traces=bool(out.get("traces", True)),
        checks=dict(raw.get("checks", {})),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", str(path)) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}", str(path)) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", "<root>")
    return parse_config(raw)
