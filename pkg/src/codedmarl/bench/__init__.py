"""Experiment grids, metric files, and run comparison."""

from .compare import Report, SchemaMismatch, compare
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .grid import ITERATION_COLUMNS, SUMMARY_COLUMNS, run_grid

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ITERATION_COLUMNS",
    "Report",
    "SUMMARY_COLUMNS",
    "SchemaMismatch",
    "compare",
    "load_config",
    "parse_config",
    "run_grid",
]
