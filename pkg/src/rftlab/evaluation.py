"""Reconstruction-quality metrics and sampling/identifiability diagnostics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import InvalidSpecError
from .forward_model import CompositeDataset
from .stress_field import GridStressMap

ACR_BAND = 0.05                      # |error| within 5% of the truth range
DEFAULT_ANGLE_QUANTUM = np.pi / 180  # 1 degree uniqueness quantum
DEFAULT_BIN_SIZE = np.pi / 36        # 5 degree coverage bins
SIGN_REGION_GAMMA = np.pi / 3        # gamma above which the x-map changes sign


@dataclass(frozen=True)
class ComponentMetrics:
    """Error and agreement metrics for one stress component.

    Normalized metrics (rmse_pct, mae_pct, acr_pct) are NaN with
    ``normalized_defined`` False when the truth range is zero; pearson and
    r2 are NaN when the corresponding variance vanishes.
    """

    rmse: float
    mae: float
    rmse_pct: float
    mae_pct: float
    r2: float
    pearson: float
    acr_pct: float
    normalized_defined: bool = True


@dataclass(frozen=True)
class MetricsReport:
    z: ComponentMetrics
    x: ComponentMetrics

    def records(self, prefix=""):
        """Flat (key, value) pairs for line-oriented result files."""
        out = []
        for comp in ("z", "x"):
            metrics = getattr(self, comp)
            for name in ("rmse", "mae", "rmse_pct", "mae_pct", "r2", "pearson", "acr_pct"):
                out.append((f"{prefix}{comp}.{name}", getattr(metrics, name)))
            out.append((f"{prefix}{comp}.normalized_defined", int(metrics.normalized_defined)))
        return out

    def table(self):
        """Text table mirroring the summary column order."""
        header = f"{'axis':<6}{'RMSE':>12}{'MAE':>12}{'R2':>10}{'Pearson':>10}{'ACR%':>10}"
        lines = [header]
        for comp in ("z", "x"):
            m = getattr(self, comp)
            lines.append(
                f"{comp:<6}{m.rmse:>12.4g}{m.mae:>12.4g}{m.r2:>10.4f}"
                f"{m.pearson:>10.4f}{m.acr_pct:>10.2f}"
            )
        return "\n".join(lines)


def _component_metrics(estimate, truth, mask):
    est = estimate[mask]
    tru = truth[mask]
    err = est - tru
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    # The 5% band and percent normalizations use the full-map truth range;
    # a mask only restricts which nodes are evaluated.
    value_range = float(truth.max() - truth.min())
    if value_range > 0.0:
        rmse_pct = 100.0 * rmse / value_range
        mae_pct = 100.0 * mae / value_range
        acr_pct = 100.0 * float(np.mean(np.abs(err) <= ACR_BAND * value_range))
        defined = True
    else:
        rmse_pct = mae_pct = acr_pct = math.nan
        defined = False
    ss_tot = float(np.sum((tru - tru.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot if ss_tot > 0.0 else math.nan
    if np.std(est) > 0.0 and np.std(tru) > 0.0:
        pearson = float(np.corrcoef(est, tru)[0, 1])
    else:
        pearson = math.nan
    return ComponentMetrics(rmse, mae, rmse_pct, mae_pct, r2, pearson, acr_pct, defined)


def reconstruction_metrics(
    estimate: GridStressMap, truth: GridStressMap, mask=None
) -> MetricsReport:
    """Node-wise metrics between an estimated and a ground-truth map.

    ``mask`` optionally restricts the evaluation to a boolean node subset
    (same shape as the grids); truth range and baselines are computed over
    the same subset.
    """
    if not (
        np.allclose(estimate.beta_axis, truth.beta_axis, rtol=0, atol=1e-12)
        and np.allclose(estimate.gamma_axis, truth.gamma_axis, rtol=0, atol=1e-12)
    ):
        raise InvalidSpecError("estimate and truth grids must share axes")
    if mask is None:
        mask = np.ones(truth.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise InvalidSpecError("mask shape must match the grids")
        if not mask.any():
            raise InvalidSpecError("mask selects no nodes")
    return MetricsReport(
        z=_component_metrics(estimate.values_z, truth.values_z, mask),
        x=_component_metrics(estimate.values_x, truth.values_x, mask),
    )


@dataclass(frozen=True)
class SamplingDiagnostics:
    """How a dataset samples the (beta, gamma) domain.

    redundancy = 1 - n_unique/n_total over quantized angle pairs of
    touching (weight > 0) segments; coverage counts occupied bins of a
    uniform grid over [-pi/2, pi/2]^2.
    """

    redundancy: float
    coverage_bins: int
    coverage_area: float
    sign_region_hits: int
    n_total: int
    n_unique: int


def _active_angles(dataset: CompositeDataset):
    active = dataset.weights > 0.0
    return dataset.angles[..., 0][active], dataset.angles[..., 1][active]


def sampling_diagnostics(
    dataset: CompositeDataset,
    angle_quantum: float = DEFAULT_ANGLE_QUANTUM,
    bin_size: float = DEFAULT_BIN_SIZE,
) -> SamplingDiagnostics:
    if angle_quantum <= 0.0 or bin_size <= 0.0:
        raise InvalidSpecError("angle_quantum and bin_size must be positive")
    beta, gamma = _active_angles(dataset)
    n_total = beta.size
    if n_total == 0:
        return SamplingDiagnostics(0.0, 0, 0.0, 0, 0, 0)
    quantized = np.column_stack(
        [np.round(beta / angle_quantum), np.round(gamma / angle_quantum)]
    ).astype(int)
    n_unique = np.unique(quantized, axis=0).shape[0]
    n_bins = max(1, int(round(np.pi / bin_size)))
    idx_b = np.clip(((beta + np.pi / 2) / bin_size).astype(int), 0, n_bins - 1)
    idx_g = np.clip(((gamma + np.pi / 2) / bin_size).astype(int), 0, n_bins - 1)
    occupied = np.unique(np.column_stack([idx_b, idx_g]), axis=0).shape[0]
    return SamplingDiagnostics(
        redundancy=1.0 - n_unique / n_total,
        coverage_bins=occupied,
        coverage_area=occupied * bin_size**2,
        sign_region_hits=int(np.count_nonzero(gamma > SIGN_REGION_GAMMA)),
        n_total=n_total,
        n_unique=n_unique,
    )


def diagnostics_records(diag: SamplingDiagnostics, prefix=""):
    return [
        (f"{prefix}redundancy", diag.redundancy),
        (f"{prefix}coverage_bins", diag.coverage_bins),
        (f"{prefix}coverage_area", diag.coverage_area),
        (f"{prefix}sign_region_hits", diag.sign_region_hits),
        (f"{prefix}n_total", diag.n_total),
        (f"{prefix}n_unique", diag.n_unique),
    ]


def sampled_region_mask(
    dataset: CompositeDataset,
    beta_axis,
    gamma_axis,
    bin_size: float = DEFAULT_BIN_SIZE,
    dilate: int = 0,
):
    """Boolean grid mask of nodes whose coverage bin holds any sample.

    ``dilate`` grows the sampled region by that many bins in every
    direction, useful for evaluating near-sample extrapolation.
    """
    beta_axis = np.asarray(beta_axis, dtype=float)
    gamma_axis = np.asarray(gamma_axis, dtype=float)
    beta, gamma = _active_angles(dataset)
    n_bins = max(1, int(round(np.pi / bin_size)))

    def bin_of(values):
        return np.clip(((np.asarray(values) + np.pi / 2) / bin_size).astype(int), 0, n_bins - 1)

    occupied = np.zeros((n_bins, n_bins), dtype=bool)
    if beta.size:
        occupied[bin_of(beta), bin_of(gamma)] = True
    if dilate > 0:
        occupied = binary_dilation(occupied, iterations=dilate)
    return occupied[np.ix_(bin_of(beta_axis), bin_of(gamma_axis))]
