"""Configuration, trajectory and ensemble runs, result files and the CLI."""

from qfeedback.harness.config import (
    ConfigError,
    SimulationConfig,
    parse_config,
    read_config,
    write_config,
)
from qfeedback.harness.io import read_csv, write_outputs, write_trajectory
from qfeedback.harness.runner import (
    EnsembleStats,
    TrajectoryRecord,
    reduction_experiment,
    run_ensemble,
    run_trajectory,
)

__all__ = [
    "ConfigError",
    "EnsembleStats",
    "SimulationConfig",
    "TrajectoryRecord",
    "parse_config",
    "read_config",
    "read_csv",
    "reduction_experiment",
    "run_ensemble",
    "run_trajectory",
    "write_config",
    "write_outputs",
    "write_trajectory",
]
