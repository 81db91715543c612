"""Experiment workbench: configuration, orchestration, artifacts, export."""

from .config import (
    ExperimentConfig,
    config_digest,
    load_config,
    paper_default_configs,
    parse_config,
)
from .export import export_heatmap, heatmap_svg
from .runner import (
    RunArtifacts,
    SweepResult,
    compare_configs,
    comparison_table,
    invert_observations,
    run_experiment,
    sweep_noise,
)

__all__ = [
    "ExperimentConfig",
    "RunArtifacts",
    "SweepResult",
    "compare_configs",
    "comparison_table",
    "config_digest",
    "export_heatmap",
    "heatmap_svg",
    "invert_observations",
    "load_config",
    "paper_default_configs",
    "parse_config",
    "run_experiment",
    "sweep_noise",
]
