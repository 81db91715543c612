"""Experiment configuration: schema, strict parsing, digests.

Configs are YAML (JSON also parses) key-value trees. Unknown keys are
rejected outright so a typo cannot silently change an experiment. All
randomness is driven by explicit seeds in the config; the digest covers
every semantically meaningful field (the output directory is excluded).
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import yaml

from ..errors import ConfigError, InvalidSpecError
from ..forward_model import FiveBarParams
from ..geometry import (
    RectangleParams,
    RotationParams,
    SplineParams,
    ToeGeometry,
    ToeKind,
    Trajectory,
    TrajectoryKind,
)


def _take(mapping, context, required=(), optional=()):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(mapping).__name__}")
    allowed = set(required) | set(optional)
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; allowed {sorted(allowed)}")
    missing = sorted(set(required) - set(mapping))
    if missing:
        raise ConfigError(f"{context}: missing required keys {missing}")
    return mapping


@dataclass(frozen=True)
class GroundTruthSpec:
    """Where the ground-truth stress map comes from.

    source: "prior_sample" (seeded GP draw), "file" (map CSV), or
    "scaled_base" (map CSV scaled by zeta factors).
    """

    source: str = "prior_sample"
    seed: int = 0
    signal_variance: float = 1.0
    lengthscales: tuple = (1.0, 1.0, 1.0, 1.0)
    path: str | None = None
    zeta_z: float = 1.0
    zeta_x: float = 1.0

    def __post_init__(self):
        if self.source not in ("prior_sample", "file", "scaled_base"):
            raise ConfigError(f"unknown ground_truth source {self.source!r}")
        if self.source in ("file", "scaled_base") and not self.path:
            raise ConfigError(f"ground_truth source {self.source!r} needs a path")
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))


@dataclass(frozen=True)
class FiveBarSpec:
    """Leg geometry for torque-mode observation synthesis."""

    l1: float = 0.12
    l2: float = 0.25
    l3: float = 0.05
    torque_constant: float = 0.0973
    mount_x: float | None = None  # default: midpoint of the trajectory x-range
    mount_z: float = 0.3

    def params(self) -> FiveBarParams:
        return FiveBarParams(self.l1, self.l2, self.l3, self.torque_constant)


@dataclass(frozen=True)
class ObservationSpec:
    mode: str = "force"
    noise_level: float = 0.0
    noise_seed: int = 0
    fivebar: FiveBarSpec = field(default_factory=FiveBarSpec)

    def __post_init__(self):
        if self.mode not in ("force", "torque"):
            raise ConfigError(f"observation mode must be force|torque, got {self.mode!r}")
        if self.noise_level < 0.0:
            raise ConfigError("noise_level must be >= 0")


@dataclass(frozen=True)
class ModelSpec:
    """Kernel initialization, bounds overrides, and fitting controls."""

    signal_variance_init: float | None = None
    lengthscales_init: tuple = (1.0, 1.0, 1.0, 1.0)
    noise_variance_init: float | None = None
    signal_variance_bounds: tuple | None = None
    lengthscale_bounds: tuple | None = None
    noise_variance_bounds: tuple | None = None
    restarts: int = 3
    fit_seed: int = 0
    share_kernels: bool = False

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        object.__setattr__(self, "lengthscales_init", tuple(float(v) for v in self.lengthscales_init))

    def bounds_overrides(self):
        out = {}
        if self.signal_variance_bounds is not None:
            out["signal_variance"] = tuple(self.signal_variance_bounds)
        if self.lengthscale_bounds is not None:
            out["lengthscale"] = tuple(self.lengthscale_bounds)
        if self.noise_variance_bounds is not None:
            out["noise_variance"] = tuple(self.noise_variance_bounds)
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    toe: ToeGeometry
    trajectory: Trajectory
    ground_truth: GroundTruthSpec = field(default_factory=GroundTruthSpec)
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    surface_height: float = 0.0
    grid_size: int = 37
    output_dir: str = "runs/experiment"
    sweep_levels: tuple = (0.0, 0.05, 0.2)
    sweep_seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)

    def __post_init__(self):
        if self.grid_size < 2:
            raise ConfigError("grid size must be >= 2")
        object.__setattr__(self, "sweep_levels", tuple(float(v) for v in self.sweep_levels))
        object.__setattr__(self, "sweep_seeds", tuple(int(v) for v in self.sweep_seeds))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-key every explicit seed in the config from one master seed."""
        return replace(
            self,
            ground_truth=replace(self.ground_truth, seed=seed),
            observation=replace(self.observation, noise_seed=seed),
            model=replace(self.model, fit_seed=seed),
        )


def _parse_toe(node):
    node = _take(
        node,
        "toe",
        required=("kind", "length_or_radius", "width"),
        optional=("segment_count", "attitude"),
    )
    try:
        kind = ToeKind(node["kind"])
    except ValueError:
        raise ConfigError(f"toe.kind must be one of {[k.value for k in ToeKind]}") from None
    try:
        return ToeGeometry(
            kind,
            float(node["length_or_radius"]),
            float(node["width"]),
            int(node.get("segment_count", 10)),
            float(node.get("attitude", 0.0)),
        )
    except InvalidSpecError as exc:
        raise ConfigError(f"toe: {exc}") from exc


def _parse_trajectory(node):
    common = ("kind", "sample_count", "speed")
    kind_keys = {
        "rectangle": ("penetration", "shear", "extraction"),
        "cubic_spline": ("control_points",),
        "rotation": ("center", "angular_range", "direction"),
    }
    if not isinstance(node, dict) or "kind" not in node:
        raise ConfigError("trajectory: missing 'kind'")
    kind_name = node["kind"]
    if kind_name not in kind_keys:
        raise ConfigError(f"trajectory.kind must be one of {sorted(kind_keys)}")
    node = _take(node, "trajectory", required=("kind",), optional=common[1:] + kind_keys[kind_name])
    try:
        if kind_name == "rectangle":
            params = RectangleParams(
                float(node.get("penetration", 0.05)),
                float(node.get("shear", 0.4)),
                float(node.get("extraction", 0.05)),
            )
        elif kind_name == "cubic_spline":
            pts = node.get("control_points")
            if not pts:
                raise ConfigError("trajectory: cubic_spline needs control_points")
            params = SplineParams(tuple((float(x), float(z)) for x, z in pts))
        else:
            center = node.get("center", (0.0, 0.0))
            params = RotationParams(
                (float(center[0]), float(center[1])),
                float(node.get("angular_range", 0.0)),
                int(node.get("direction", 1)),
            )
        return Trajectory(
            TrajectoryKind(kind_name),
            params,
            int(node.get("sample_count", 100)),
            float(node.get("speed", 0.02)),
        )
    except InvalidSpecError as exc:
        raise ConfigError(f"trajectory: {exc}") from exc


def _parse_ground_truth(node):
    node = _take(
        node,
        "ground_truth",
        optional=("source", "seed", "signal_variance", "lengthscales", "path", "zeta_z", "zeta_x"),
    )
    return GroundTruthSpec(
        source=node.get("source", "prior_sample"),
        seed=int(node.get("seed", 0)),
        signal_variance=float(node.get("signal_variance", 1.0)),
        lengthscales=tuple(node.get("lengthscales", (1.0, 1.0, 1.0, 1.0))),
        path=node.get("path"),
        zeta_z=float(node.get("zeta_z", 1.0)),
        zeta_x=float(node.get("zeta_x", 1.0)),
    )


def _parse_observation(node):
    node = _take(node, "observation", optional=("mode", "noise_level", "noise_seed", "fivebar"))
    fivebar = FiveBarSpec()
    if "fivebar" in node:
        fb = _take(
            node["fivebar"],
            "observation.fivebar",
            optional=("l1", "l2", "l3", "torque_constant", "mount_x", "mount_z"),
        )
        fivebar = FiveBarSpec(
            l1=float(fb.get("l1", 0.12)),
            l2=float(fb.get("l2", 0.25)),
            l3=float(fb.get("l3", 0.05)),
            torque_constant=float(fb.get("torque_constant", 0.0973)),
            mount_x=None if fb.get("mount_x") is None else float(fb["mount_x"]),
            mount_z=float(fb.get("mount_z", 0.3)),
        )
    return ObservationSpec(
        mode=node.get("mode", "force"),
        noise_level=float(node.get("noise_level", 0.0)),
        noise_seed=int(node.get("noise_seed", 0)),
        fivebar=fivebar,
    )


def _parse_model(node):
    node = _take(
        node,
        "model",
        optional=(
            "signal_variance_init",
            "lengthscales_init",
            "noise_variance_init",
            "signal_variance_bounds",
            "lengthscale_bounds",
            "noise_variance_bounds",
            "restarts",
            "fit_seed",
            "share_kernels",
        ),
    )

    def opt_float(key):
        return None if node.get(key) is None else float(node[key])

    def opt_pair(key):
        return None if node.get(key) is None else tuple(float(v) for v in node[key])

    return ModelSpec(
        signal_variance_init=opt_float("signal_variance_init"),
        lengthscales_init=tuple(node.get("lengthscales_init", (1.0, 1.0, 1.0, 1.0))),
        noise_variance_init=opt_float("noise_variance_init"),
        signal_variance_bounds=opt_pair("signal_variance_bounds"),
        lengthscale_bounds=opt_pair("lengthscale_bounds"),
        noise_variance_bounds=opt_pair("noise_variance_bounds"),
        restarts=int(node.get("restarts", 3)),
        fit_seed=int(node.get("fit_seed", 0)),
        share_kernels=bool(node.get("share_kernels", False)),
    )


def parse_config(tree: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed key-value tree."""
    tree = _take(
        tree,
        "config",
        required=("toe", "trajectory"),
        optional=(
            "ground_truth",
            "observation",
            "model",
            "surface_height",
            "grid",
            "output_dir",
            "sweep",
        ),
    )
    grid_size = 37
    if "grid" in tree:
        grid = _take(tree["grid"], "grid", optional=("size",))
        grid_size = int(grid.get("size", 37))
    sweep_levels, sweep_seeds = (0.0, 0.05, 0.2), tuple(range(10))
    if "sweep" in tree:
        sweep = _take(tree["sweep"], "sweep", optional=("levels", "seeds"))
        sweep_levels = tuple(float(v) for v in sweep.get("levels", sweep_levels))
        sweep_seeds = tuple(int(v) for v in sweep.get("seeds", sweep_seeds))
    return ExperimentConfig(
        toe=_parse_toe(tree["toe"]),
        trajectory=_parse_trajectory(tree["trajectory"]),
        ground_truth=_parse_ground_truth(tree.get("ground_truth", {})),
        observation=_parse_observation(tree.get("observation", {})),
        model=_parse_model(tree.get("model", {})),
        surface_height=float(tree.get("surface_height", 0.0)),
        grid_size=grid_size,
        output_dir=str(tree.get("output_dir", "runs/experiment")),
        sweep_levels=sweep_levels,
        sweep_seeds=sweep_seeds,
    )


def load_config(path) -> ExperimentConfig:
    """Load and validate a config file (YAML or JSON)."""
    with open(path) as fh:
        try:
            tree = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    if tree is None:
        raise ConfigError(f"{path}: empty config")
    return parse_config(tree)


def canonical_dict(config: ExperimentConfig) -> dict:
    """Semantic content of a config as plain JSON-serializable data."""
    traj = config.trajectory
    params = {
        TrajectoryKind.RECTANGLE: lambda p: {
            "penetration": p.penetration,
            "shear": p.shear,
            "extraction": p.extraction,
        },
        TrajectoryKind.CUBIC_SPLINE: lambda p: {"control_points": list(map(list, p.control_points))},
        TrajectoryKind.ROTATION: lambda p: {
            "center": list(p.center),
            "angular_range": p.angular_range,
            "direction": p.direction,
        },
    }[traj.kind](traj.params)
    fb = config.observation.fivebar
    return {
        "toe": {
            "kind": config.toe.kind.value,
            "length_or_radius": config.toe.length_or_radius,
            "width": config.toe.width,
            "segment_count": config.toe.segment_count,
            "attitude": config.toe.attitude,
        },
        "trajectory": {
            "kind": traj.kind.value,
            "sample_count": traj.sample_count,
            "speed": traj.speed,
            **params,
        },
        "ground_truth": {
            "source": config.ground_truth.source,
            "seed": config.ground_truth.seed,
            "signal_variance": config.ground_truth.signal_variance,
            "lengthscales": list(config.ground_truth.lengthscales),
            "path": config.ground_truth.path,
            "zeta_z": config.ground_truth.zeta_z,
            "zeta_x": config.ground_truth.zeta_x,
        },
        "observation": {
            "mode": config.observation.mode,
            "noise_level": config.observation.noise_level,
            "noise_seed": config.observation.noise_seed,
            "fivebar": {
                "l1": fb.l1,
                "l2": fb.l2,
                "l3": fb.l3,
                "torque_constant": fb.torque_constant,
                "mount_x": fb.mount_x,
                "mount_z": fb.mount_z,
            },
        },
        "model": {
            "signal_variance_init": config.model.signal_variance_init,
            "lengthscales_init": list(config.model.lengthscales_init),
            "noise_variance_init": config.model.noise_variance_init,
            "signal_variance_bounds": config.model.signal_variance_bounds
            and list(config.model.signal_variance_bounds),
            "lengthscale_bounds": config.model.lengthscale_bounds
            and list(config.model.lengthscale_bounds),
            "noise_variance_bounds": config.model.noise_variance_bounds
            and list(config.model.noise_variance_bounds),
            "restarts": config.model.restarts,
            "fit_seed": config.model.fit_seed,
            "share_kernels": config.model.share_kernels,
        },
        "surface_height": config.surface_height,
        "grid_size": config.grid_size,
    }


def config_digest(config: ExperimentConfig) -> str:
    """Stable hash of the semantic config content (output_dir excluded)."""
    payload = json.dumps(canonical_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def paper_default_configs(output_root="runs"):
    """The four standard toe/gait combinations used throughout validation."""
    rect = {"kind": "rectangle", "penetration": 0.05, "shear": 0.4, "extraction": 0.05}
    cubic = {
        "kind": "cubic_spline",
        "control_points": [[-0.20, 0.0], [-0.10, -0.05], [0.10, 0.0], [0.20, -0.05]],
    }
    i_toe = {"kind": "i_toe", "length_or_radius": 0.02, "width": 0.008, "segment_count": 10}
    c_toe = {"kind": "c_toe", "length_or_radius": 0.02, "width": 0.008, "segment_count": 10}
    combos = {
        "i_toe_gait1": (i_toe, rect),
        "i_toe_gait2": (i_toe, cubic),
        "c_toe_gait1": (c_toe, rect),
        "c_toe_gait2": (c_toe, cubic),
    }
    configs = {}
    for name, (toe, traj) in combos.items():
        configs[name] = parse_config(
            {
                "toe": dict(toe),
                "trajectory": {**traj, "sample_count": 100, "speed": 0.02},
                "output_dir": f"{output_root}/{name}",
            }
        )
    return configs
