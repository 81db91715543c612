"""rftlab: granular terrain stress-map simulation and reconstruction.

Forward side: discretized toe geometries driven along gait trajectories
against a flat granular surface, with net contact forces summed from
depth-weighted stress-map evaluations per segment. Inverse side: a
composite-observation Gaussian process that reconstructs the latent
stress-per-depth maps, with calibrated uncertainty, from aggregated force
or joint-torque measurements.
"""

from .errors import (
    ConfigError,
    DegenerateFitError,
    FactorizationError,
    InvalidSpecError,
    NumericalError,
    RftLabError,
    SingularConfigurationError,
)
from .evaluation import (
    MetricsReport,
    SamplingDiagnostics,
    reconstruction_metrics,
    sampled_region_mask,
    sampling_diagnostics,
)
from .forward_model import (
    CompositeDataset,
    FiveBarParams,
    ForceSample,
    assemble_dataset,
    fivebar_jacobian,
    force_to_torque,
    forward_force,
    forward_series,
    inject_noise,
    preprocess_force_log,
    torque_to_force,
)
from .geometry import (
    DiscretizedToe,
    PoseSeries,
    RectangleParams,
    RotationParams,
    SegmentState,
    SegmentStateSeries,
    SplineParams,
    ToeGeometry,
    ToeKind,
    Trajectory,
    TrajectoryKind,
    make_toe,
    make_trajectory,
    segment_states,
)
from .inverse_gp import (
    GpModel,
    KernelConfig,
    SemiParametricModel,
    assemble_covariance,
    embed,
    fit_hyperparameters,
    fit_residual,
    fit_scaling,
    kernel_eval,
    log_marginal_likelihood,
)
from .stress_field import (
    GridStressMap,
    ScaledBaseMap,
    default_grid_axes,
    eval_map,
    eval_map_many,
    read_map_csv,
    sample_prior_map,
    scale_map,
    write_map_csv,
)

__version__ = "0.1.0"
