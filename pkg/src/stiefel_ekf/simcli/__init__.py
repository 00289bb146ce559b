"""Experiment harness for the Stiefel EKF convergence study."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import generate_scenario, run_experiment
from .plots import emit_plots

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "generate_scenario",
    "run_experiment",
    "emit_plots",
]
