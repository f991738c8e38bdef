"""Experiment harness: configs, runs, CSV trajectories and SVG plots."""

from .config import ExperimentConfig, config_from_dict, load_config, sweep_configs
from .experiment import ExperimentError, Trajectory, run_experiment
from .plot import emit_plot

__all__ = [
    "ExperimentConfig",
    "ExperimentError",
    "Trajectory",
    "config_from_dict",
    "emit_plot",
    "load_config",
    "run_experiment",
    "sweep_configs",
]
