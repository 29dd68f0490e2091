"""Twin-experiment harness: configuration, runner, tuning, reporting and CLI."""
from .config import ExperimentConfig, load_config
from .runner import RunResult, build_setup, rmse, run_twin
from .tuning import TuningError, grid_tune

__all__ = ["ExperimentConfig", "load_config", "RunResult", "build_setup",
           "rmse", "run_twin", "TuningError", "grid_tune"]
