"""Experiment configuration, parallel Monte Carlo execution and the command line."""
from .config import ConfigError, ExperimentConfig, ModelConfig, apply_overrides, load_config
from .parallel import RunRecord, resolve_workers, run_parallel

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ModelConfig",
    "RunRecord",
    "apply_overrides",
    "load_config",
    "resolve_workers",
    "run_parallel",
]
