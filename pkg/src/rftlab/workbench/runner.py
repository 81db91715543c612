"""Experiment orchestration: full pipeline runs, noise sweeps, comparisons.

A run is a pure function of its config (all seeds explicit): re-running an
identical config reproduces every numeric artifact byte for byte. Each
stage failure is re-raised as a StageError chaining the original
exception; partial artifacts stay on disk next to a FAILED marker.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, StageError
from ..evaluation import (
    MetricsReport,
    SamplingDiagnostics,
    diagnostics_records,
    reconstruction_metrics,
    sampled_region_mask,
    sampling_diagnostics,
)
from ..forward_model import (
    CompositeDataset,
    assemble_dataset,
    contact_force_jacobian,
    fivebar_inverse_kinematics,
    fivebar_jacobian,
    forward_series,
    inject_noise_series,
    read_force_log,
    read_torque_log,
    write_force_log,
    write_torque_log,
)
from ..geometry import make_toe, make_trajectory, segment_states, series_to_csv
from ..inverse_gp import GpModel, KernelConfig, fit_hyperparameters
from ..stress_field import (
    GridStressMap,
    default_grid_axes,
    read_map_csv,
    sample_prior_map,
    scale_map,
    write_map_csv,
)
from .config import ExperimentConfig, config_digest
from .export import export_heatmap


@dataclass
class RunArtifacts:
    """Everything a pipeline run produced, in memory and on disk."""

    config: ExperimentConfig
    digest: str
    output_dir: str
    paths: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    series: object = None
    observations: np.ndarray | None = None
    dataset: CompositeDataset | None = None
    model: GpModel | None = None
    reconstruction: GridStressMap | None = None
    variance_z: np.ndarray | None = None
    variance_x: np.ndarray | None = None
    ground_truth: GridStressMap | None = None
    metrics: MetricsReport | None = None
    metrics_sampled: MetricsReport | None = None
    diagnostics: SamplingDiagnostics | None = None


def _format_value(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_records(path, pairs):
    with open(path, "w") as fh:
        for key, value in pairs:
            fh.write(f"{key}: {_format_value(value)}\n")


def _load_ground_truth(config: ExperimentConfig, axes):
    gt = config.ground_truth
    if gt.source == "prior_sample":
        kernel = KernelConfig(gt.signal_variance, gt.lengthscales)
        return sample_prior_map(kernel, gt.seed, axes[0], axes[1])
    base = read_map_csv(gt.path)
    if gt.source == "file":
        return base
    return scale_map(base, gt.zeta_z, gt.zeta_x)


def _torque_observations(config: ExperimentConfig, poses, forces):
    """Project per-step forces to joint torques through the five-bar leg."""
    fb = config.observation.fivebar
    params = fb.params()
    mount_x = fb.mount_x
    if mount_x is None:
        mount_x = 0.5 * (poses.positions[:, 0].min() + poses.positions[:, 0].max())
    t = len(poses)
    torques = np.empty((t, 2))
    joint_angles = np.empty((t, 2))
    jacobians = np.empty((t, 2, 2))
    for i in range(t):
        x_leg = poses.positions[i, 0] - mount_x
        y_leg = fb.mount_z - poses.positions[i, 1]
        phi1, phi2 = fivebar_inverse_kinematics(x_leg, y_leg, params)
        joint_angles[i] = (phi1, phi2)
        contact_jac = contact_force_jacobian(fivebar_jacobian(phi1, phi2, params))
        jacobians[i] = contact_jac
        torques[i] = contact_jac.T @ forces[i]
    return torques, joint_angles, jacobians


class _StageLogger:
    def __init__(self):
        self.lines = []

    def log(self, message):
        self.lines.append(message)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.lines) + ("\n" if self.lines else ""))


def run_experiment(config: ExperimentConfig, fit: bool = True) -> RunArtifacts:
    """Run geometry -> forward (+noise) -> dataset -> fit -> posterior -> metrics.

    With ``fit`` False the pipeline stops after writing the simulated
    observations (the CLI `simulate` mode).
    """
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    art = RunArtifacts(config=config, digest=config_digest(config), output_dir=out_dir)
    log = _StageLogger()
    stage = "setup"
    try:
        stage = "geometry"
        toe = make_toe(config.toe)
        poses = make_trajectory(config.trajectory)
        series = segment_states(toe, poses, config.surface_height)
        art.series = series
        path = os.path.join(out_dir, "segment_states.csv")
        series_to_csv(series, path)
        art.paths["segment_states"] = path
        log.log(f"geometry: {series.num_steps} steps x {series.num_segments} segments")

        stage = "ground_truth"
        axes = default_grid_axes(config.grid_size)
        truth = _load_ground_truth(config, axes)
        art.ground_truth = truth
        path = os.path.join(out_dir, "ground_truth.csv")
        write_map_csv(truth, path)
        art.paths["ground_truth"] = path
        log.log(f"ground_truth: source={config.ground_truth.source}")

        stage = "forward"
        forces = forward_series(series, truth)
        obs = config.observation
        if obs.mode == "torque":
            torques, joint_angles, step_jacobians = _torque_observations(config, poses, forces)
            observations = inject_noise_series(torques, obs.noise_level, obs.noise_seed)
            jacobians = np.broadcast_to(
                step_jacobians[:, None, :, :],
                (series.num_steps, series.num_segments, 2, 2),
            ).copy()
            path = os.path.join(out_dir, "observations.csv")
            write_torque_log(path, series.timestamps, observations, joint_angles)
        else:
            observations = inject_noise_series(forces, obs.noise_level, obs.noise_seed)
            jacobians = None
            path = os.path.join(out_dir, "observations.csv")
            write_force_log(path, series.timestamps, observations)
        art.observations = observations
        art.paths["observations"] = path
        log.log(f"forward: mode={obs.mode} noise_level={obs.noise_level}")

        stage = "dataset"
        noise_floor = obs.noise_level * float(np.mean(observations**2))
        dataset = assemble_dataset(series, observations, noise_floor, jacobians)
        art.dataset = dataset
        if not np.any(dataset.weights > 0.0):
            art.warnings.append(
                "no segment touches the terrain; posterior will equal the prior"
            )
            log.log("dataset: WARNING zero-weight dataset")
        if not fit:
            log.log("simulate-only run: stopping before fit")
            log.write(os.path.join(out_dir, "log.txt"))
            art.paths["log"] = os.path.join(out_dir, "log.txt")
            return art

        stage = "fit"
        model_spec = config.model
        init = None
        if model_spec.signal_variance_init is not None:
            init = KernelConfig(model_spec.signal_variance_init, model_spec.lengthscales_init)
        model = fit_hyperparameters(
            dataset,
            init_z=init,
            init_x=init,
            noise_variance_init=model_spec.noise_variance_init,
            bounds=model_spec.bounds_overrides() or None,
            restarts=model_spec.restarts,
            seed=model_spec.fit_seed,
            share_kernels=model_spec.share_kernels,
        )
        art.model = model
        log.log(
            "fit: mll={:.6g} restart={}".format(
                model.fit_info["log_marginal_likelihood"], model.fit_info["restart_index"]
            )
        )

        stage = "posterior"
        recon, var_z, var_x, post_diag = model.posterior_stress_grid(axes[0], axes[1])
        art.reconstruction = recon
        art.variance_z = var_z
        art.variance_x = var_x
        log.log(f"posterior: variance_floor_hits={post_diag['variance_floor_hits']}")

        stage = "metrics"
        art.diagnostics = sampling_diagnostics(dataset)
        mask = sampled_region_mask(dataset, axes[0], axes[1])
        art.metrics = reconstruction_metrics(recon, truth)
        if mask.any():
            art.metrics_sampled = reconstruction_metrics(recon, truth, mask)
        log.log("metrics: computed")

        stage = "export"
        _write_run_outputs(art, model, recon, var_z, var_x, out_dir)
        log.log("export: artifacts written")
        log.write(os.path.join(out_dir, "log.txt"))
        art.paths["log"] = os.path.join(out_dir, "log.txt")
        return art
    except Exception as exc:
        log.log(f"FAILED at stage {stage}: {exc}")
        log.write(os.path.join(out_dir, "log.txt"))
        with open(os.path.join(out_dir, "FAILED.txt"), "w") as fh:
            fh.write(f"stage: {stage}\nerror: {exc}\n")
        raise StageError(stage, str(exc)) from exc


def _write_run_outputs(art, model, recon, var_z, var_x, out_dir):
    recon_path = os.path.join(out_dir, "reconstruction.csv")
    write_map_csv(recon, recon_path)
    art.paths["reconstruction"] = recon_path
    var_map = GridStressMap(recon.beta_axis, recon.gamma_axis, var_z, var_x)
    var_path = os.path.join(out_dir, "reconstruction_variance.csv")
    write_map_csv(var_map, var_path)
    art.paths["reconstruction_variance"] = var_path
    for comp in ("z", "x"):
        svg_path = os.path.join(out_dir, f"reconstruction_{comp}.svg")
        export_heatmap(recon, svg_path, render="svg", component=comp)
        art.paths[f"reconstruction_{comp}_svg"] = svg_path

    model_path = os.path.join(out_dir, "model.txt")
    pairs = [
        ("format", "rftlab-model/1"),
        ("dataset_digest", art.dataset.digest()),
        ("noise_variance", model.noise_variance),
        ("jitter", model.jitter),
        ("log_marginal_likelihood", model.log_marginal_likelihood()),
        ("kernel_z.signal_variance", model.kernel_z.signal_variance),
        ("kernel_z.lengthscales", ",".join(format(v, ".17g") for v in model.kernel_z.lengthscales)),
        ("kernel_x.signal_variance", model.kernel_x.signal_variance),
        ("kernel_x.lengthscales", ",".join(format(v, ".17g") for v in model.kernel_x.lengthscales)),
        ("posterior_mean_file", "reconstruction.csv"),
        ("posterior_variance_file", "reconstruction_variance.csv"),
    ]
    _write_records(model_path, pairs)
    art.paths["model"] = model_path

    results = [("config_digest", art.digest)]
    if art.metrics is not None:
        results += art.metrics.records(prefix="full.")
    if art.metrics_sampled is not None:
        results += art.metrics_sampled.records(prefix="sampled.")
    if art.diagnostics is not None:
        results += diagnostics_records(art.diagnostics, prefix="sampling.")
    for warning in art.warnings:
        results.append(("warning", warning))
    results_path = os.path.join(out_dir, "results.txt")
    _write_records(results_path, results)
    art.paths["results"] = results_path


def invert_observations(config: ExperimentConfig, observations_path: str) -> RunArtifacts:
    """Fit and reconstruct from an observation file instead of simulating.

    The file must match the configured observation mode and the
    trajectory's sample count.
    """
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    art = RunArtifacts(config=config, digest=config_digest(config), output_dir=out_dir)
    log = _StageLogger()
    stage = "setup"
    try:
        stage = "geometry"
        toe = make_toe(config.toe)
        poses = make_trajectory(config.trajectory)
        series = segment_states(toe, poses, config.surface_height)
        art.series = series

        stage = "ingest"
        if config.observation.mode == "torque":
            _, observations, joint_angles = read_torque_log(observations_path)
            params = config.observation.fivebar.params()
            jacobians = np.empty((len(poses), series.num_segments, 2, 2))
            for i, (phi1, phi2) in enumerate(joint_angles):
                jac = contact_force_jacobian(fivebar_jacobian(phi1, phi2, params))
                jacobians[i] = jac
        else:
            _, observations = read_force_log(observations_path)
            jacobians = None
        if observations.shape[0] != series.num_steps:
            raise ConfigError(
                f"observation file has {observations.shape[0]} rows, "
                f"trajectory has {series.num_steps} steps"
            )
        art.observations = observations

        stage = "dataset"
        dataset = assemble_dataset(series, observations, 0.0, jacobians)
        art.dataset = dataset

        stage = "fit"
        model = fit_hyperparameters(
            dataset,
            restarts=config.model.restarts,
            seed=config.model.fit_seed,
            share_kernels=config.model.share_kernels,
        )
        art.model = model

        stage = "posterior"
        axes = default_grid_axes(config.grid_size)
        recon, var_z, var_x, _ = model.posterior_stress_grid(axes[0], axes[1])
        art.reconstruction = recon
        art.variance_z = var_z
        art.variance_x = var_x
        art.diagnostics = sampling_diagnostics(dataset)

        stage = "export"
        _write_run_outputs(art, model, recon, var_z, var_x, out_dir)
        log.log("invert: artifacts written")
        log.write(os.path.join(out_dir, "log.txt"))
        return art
    except Exception as exc:
        with open(os.path.join(out_dir, "FAILED.txt"), "w") as fh:
            fh.write(f"stage: {stage}\nerror: {exc}\n")
        raise StageError(stage, str(exc)) from exc


@dataclass
class SweepResult:
    rows: list
    aggregates: list

    def mean_rmse_by_level(self, component="z"):
        out = {}
        for agg in self.aggregates:
            if agg["component"] == component:
                out[agg["level"]] = agg["rmse_mean"]
        return out


def sweep_noise(config: ExperimentConfig, levels=None, seeds=None) -> SweepResult:
    """Run the config across noise levels x seeds and aggregate metrics.

    Cells run in deterministic (level, seed) order, each in its own
    subdirectory of the config output dir.
    """
    levels = config.sweep_levels if levels is None else tuple(float(v) for v in levels)
    seeds = config.sweep_seeds if seeds is None else tuple(int(v) for v in seeds)
    if any(level < 0 for level in levels):
        raise ConfigError("noise levels must be >= 0")
    root = config.output_dir
    rows = []
    for level in levels:
        for seed in seeds:
            cell_dir = os.path.join(root, f"level_{level:g}_seed_{seed}")
            cell = replace(
                config,
                observation=replace(config.observation, noise_level=level, noise_seed=seed),
                output_dir=cell_dir,
            )
            art = run_experiment(cell)
            for comp in ("z", "x"):
                metrics = getattr(art.metrics, comp)
                rows.append(
                    {
                        "level": level,
                        "seed": seed,
                        "component": comp,
                        "rmse": metrics.rmse,
                        "mae": metrics.mae,
                        "r2": metrics.r2,
                        "pearson": metrics.pearson,
                        "acr_pct": metrics.acr_pct,
                        "dir": cell_dir,
                    }
                )
    aggregates = []
    for level in levels:
        for comp in ("z", "x"):
            cells = [r for r in rows if r["level"] == level and r["component"] == comp]
            values = np.array([c["rmse"] for c in cells])
            aggregates.append(
                {
                    "level": level,
                    "component": comp,
                    "rmse_mean": float(values.mean()),
                    "rmse_std": float(values.std()),
                    "cells": len(cells),
                }
            )
    pairs = []
    for row in rows:
        key = f"cell.level_{row['level']:g}.seed_{row['seed']}.{row['component']}"
        pairs.append((f"{key}.rmse", row["rmse"]))
        pairs.append((f"{key}.acr_pct", row["acr_pct"]))
    for agg in aggregates:
        key = f"aggregate.level_{agg['level']:g}.{agg['component']}"
        pairs.append((f"{key}.rmse_mean", agg["rmse_mean"]))
        pairs.append((f"{key}.rmse_std", agg["rmse_std"]))
    os.makedirs(root, exist_ok=True)
    _write_records(os.path.join(root, "sweep_summary.txt"), pairs)
    return SweepResult(rows=rows, aggregates=aggregates)


def compare_configs(configs) -> list:
    """Run several configs and rank them by z-axis grid RMSE (best first).

    ``configs`` maps names to ExperimentConfig (or is a list, auto-named).
    Returns the sorted row dicts.
    """
    if not isinstance(configs, dict):
        configs = {f"config_{i}": c for i, c in enumerate(configs)}
    rows = []
    for name, cfg in configs.items():
        art = run_experiment(cfg)
        rows.append(
            {
                "name": name,
                "rmse_z": art.metrics.z.rmse,
                "rmse_x": art.metrics.x.rmse,
                "pearson_z": art.metrics.z.pearson,
                "acr_z": art.metrics.z.acr_pct,
                "redundancy": art.diagnostics.redundancy,
                "coverage_bins": art.diagnostics.coverage_bins,
                "dir": art.output_dir,
            }
        )
    rows.sort(key=lambda r: r["rmse_z"])
    return rows


def comparison_table(rows) -> str:
    header = (
        f"{'name':<16}{'rmse_z':>12}{'rmse_x':>12}{'pearson_z':>12}"
        f"{'acr_z%':>10}{'redundancy':>12}{'bins':>7}"
    )
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['name']:<16}{r['rmse_z']:>12.4g}{r['rmse_x']:>12.4g}"
            f"{r['pearson_z']:>12.4f}{r['acr_z']:>10.2f}{r['redundancy']:>12.4f}"
            f"{r['coverage_bins']:>7d}"
        )
    return "\n".join(lines)
