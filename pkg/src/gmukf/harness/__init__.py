"""Experiment runner: configuration, simulation, outputs and the command line."""

from .config import ExperimentConfig, load_config, parse_config
from .simulate import RunResult, run_experiment
from .output import read_trace, summarize, write_outputs
