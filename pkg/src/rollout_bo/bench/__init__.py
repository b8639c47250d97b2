"""Experiment harness: replicate runs, persistence and reporting."""
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    StageTrace,
    Summary,
    aggregate,
    gap,
    parse_mode,
    replicate_seed,
    run_experiment,
    run_replicates,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "StageTrace",
    "Summary",
    "aggregate",
    "gap",
    "parse_mode",
    "replicate_seed",
    "run_experiment",
    "run_replicates",
]
