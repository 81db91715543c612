"""Toe geometries, gait trajectories, and per-segment interaction states.

The world plane is (x, z) with z pointing up; the granular free surface is
flat at a configurable height. A toe is a rigid planar body discretized
into surface segments, each carrying a center, a unit tangent, a unit
outward (material-facing) normal, and an area. A trajectory drives the
toe's body origin through the plane; per step and segment we compute

  beta  -- angle of the segment tangent from the horizontal, pi-periodic,
           stored in the fundamental domain (-pi/2, pi/2];
  gamma -- angle between the segment velocity and its surface normal,
           signed by the tangential velocity component, in [-pi/2, pi/2];
  depth -- distance of the segment center below the free surface (0 above).

Velocities come from central finite differences on the sampled poses
(one-sided at the endpoints). Everything here is a pure function of its
inputs: identical inputs give bit-identical outputs.
"""

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidSpecError

ZERO_SPEED = 1e-9  # m/s below which gamma is undefined


def normalize_beta(angle):
    """Map an angle (scalar or array) into the pi-periodic domain (-pi/2, pi/2]."""
    a = np.mod(np.asarray(angle, dtype=float) + 0.5 * np.pi, np.pi)
    a = np.where(a <= 0.0, a + np.pi, a)
    out = a - 0.5 * np.pi
    if np.isscalar(angle) or np.ndim(angle) == 0:
        return float(out)
    return out


class ToeKind(Enum):
    I_TOE = "i_toe"
    C_TOE = "c_toe"


class TrajectoryKind(Enum):
    RECTANGLE = "rectangle"
    CUBIC_SPLINE = "cubic_spline"
    ROTATION = "rotation"


@dataclass(frozen=True)
class ToeGeometry:
    """Parametric toe spec: a flat plate (I) or a semicircular arc (C).

    ``length_or_radius`` is the plate length for I_TOE and the arc radius
    for C_TOE, in meters. ``attitude`` is a fixed body-frame rotation
    offset in radians (0 = I-toe horizontal, C-toe opening upward).
    """

    kind: ToeKind
    length_or_radius: float
    width: float
    segment_count: int = 10
    attitude: float = 0.0

    def __post_init__(self):
        if self.length_or_radius <= 0.0 or self.width <= 0.0:
            raise InvalidSpecError("toe dimensions must be positive")
        if self.segment_count < 1:
            raise InvalidSpecError("segment_count must be >= 1")


@dataclass(frozen=True, eq=False)
class DiscretizedToe:
    """Body-frame segment centers, unit tangents, outward normals, areas."""

    centers: np.ndarray   # (M, 2)
    tangents: np.ndarray  # (M, 2), unit
    normals: np.ndarray   # (M, 2), unit, pointing away from the body
    areas: np.ndarray     # (M,), m^2

    @property
    def segment_count(self):
        return self.areas.shape[0]

    @property
    def total_area(self):
        return float(self.areas.sum())


def _rot(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def make_toe(spec: ToeGeometry) -> DiscretizedToe:
    """Discretize a toe spec into M surface segments.

    I_TOE: uniform partition of the plate; all tangents identical.
    C_TOE: uniform arc-length partition of the lower semicircle (body
    origin at the circle center); tangent angles sample the arc uniformly.
    """
    m = spec.segment_count
    if spec.kind is ToeKind.I_TOE:
        length = spec.length_or_radius
        xs = (np.arange(m) + 0.5) / m * length - 0.5 * length
        centers = np.column_stack([xs, np.zeros(m)])
        tangents = np.tile([1.0, 0.0], (m, 1))
        normals = np.tile([0.0, -1.0], (m, 1))
        areas = np.full(m, length * spec.width / m)
    else:
        radius = spec.length_or_radius
        phi = (np.arange(m) + 0.5) * np.pi / m
        centers = np.column_stack([radius * np.cos(phi), -radius * np.sin(phi)])
        tangents = np.column_stack([-np.sin(phi), -np.cos(phi)])
        normals = np.column_stack([np.cos(phi), -np.sin(phi)])
        areas = np.full(m, np.pi * radius * spec.width / m)
    if spec.attitude != 0.0:
        r = _rot(spec.attitude)
        centers = centers @ r.T
        tangents = tangents @ r.T
        normals = normals @ r.T
    return DiscretizedToe(centers, tangents, normals, areas)


@dataclass(frozen=True)
class RectangleParams:
    """Down / across / up legs, in meters; zero-length legs are dropped."""

    penetration: float
    shear: float
    extraction: float

    def __post_init__(self):
        if min(self.penetration, self.shear, self.extraction) < 0.0:
            raise InvalidSpecError("rectangle legs must be non-negative")
        if self.penetration + self.shear + self.extraction <= 0.0:
            raise InvalidSpecError("rectangle trajectory has zero length")


@dataclass(frozen=True)
class SplineParams:
    """Control points (x, z) in meters, strictly increasing in x."""

    control_points: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(z)) for x, z in self.control_points)
        object.__setattr__(self, "control_points", pts)
        if len(pts) < 2:
            raise InvalidSpecError("spline needs at least 2 control points")
        xs = [p[0] for p in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidSpecError("spline control points must have strictly increasing x")


@dataclass(frozen=True)
class RotationParams:
    """Rotation of the toe about a fixed world-frame center."""

    center: tuple
    angular_range: float
    direction: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.angular_range < 0.0:
            raise InvalidSpecError("angular_range must be non-negative")
        if self.direction not in (-1, 1):
            raise InvalidSpecError("direction must be +1 or -1")


@dataclass(frozen=True)
class Trajectory:
    kind: TrajectoryKind
    params: object
    sample_count: int = 100
    speed: float = 0.02

    def __post_init__(self):
        if self.sample_count < 2:
            raise InvalidSpecError("sample_count must be >= 2")
        if self.speed <= 0.0:
            raise InvalidSpecError("speed must be positive")
        expected = {
            TrajectoryKind.RECTANGLE: RectangleParams,
            TrajectoryKind.CUBIC_SPLINE: SplineParams,
            TrajectoryKind.ROTATION: RotationParams,
        }[self.kind]
        if not isinstance(self.params, expected):
            raise InvalidSpecError(f"{self.kind.value} trajectory needs {expected.__name__}")


@dataclass(frozen=True, eq=False)
class PoseSeries:
    """Sampled rigid-body poses: origin position, rotation, timestamp."""

    positions: np.ndarray   # (t, 2)
    angles: np.ndarray      # (t,), radians
    timestamps: np.ndarray  # (t,), seconds, strictly increasing

    def __post_init__(self):
        if not np.all(np.isfinite(self.positions)):
            raise InvalidSpecError("non-finite sampled positions")
        if np.any(np.diff(self.timestamps) <= 0.0):
            raise InvalidSpecError("timestamps must be strictly increasing")

    def __len__(self):
        return self.timestamps.shape[0]

    def translated(self, dx=0.0, dz=0.0):
        return PoseSeries(self.positions + np.array([dx, dz]), self.angles, self.timestamps)


def _allocate_arclengths(knots, n):
    """n strictly increasing arc lengths covering [0, L], containing every knot.

    Interior samples are spread across spans proportionally to span length
    (largest-remainder rounding, ties broken by span index), uniformly
    within each span. Requires n >= len(knots).
    """
    knots = np.asarray(knots, dtype=float)
    k = knots.shape[0]
    if n < k:
        raise InvalidSpecError(f"sample_count {n} too small for {k} path knots")
    spans = np.diff(knots)
    extra = n - k
    quota = extra * spans / spans.sum()
    counts = np.floor(quota).astype(int)
    remainder = quota - counts
    short = extra - counts.sum()
    if short > 0:
        order = np.argsort(-remainder, kind="stable")
        counts[order[:short]] += 1
    pieces = [knots[:1]]
    for i, c in enumerate(counts):
        if c > 0:
            inner = knots[i] + spans[i] * (np.arange(1, c + 1) / (c + 1))
            pieces.append(inner)
        pieces.append(knots[i + 1 : i + 2])
    return np.concatenate(pieces)


def _polyline_trajectory(corners, spec):
    corners = np.asarray(corners, dtype=float)
    seg_len = np.hypot(*np.diff(corners, axis=0).T)
    knots = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = _allocate_arclengths(knots, spec.sample_count)
    x = np.interp(s, knots, corners[:, 0])
    z = np.interp(s, knots, corners[:, 1])
    return PoseSeries(
        np.column_stack([x, z]), np.zeros_like(s), s / spec.speed
    )


def _spline_trajectory(spec):
    pts = np.asarray(spec.params.control_points, dtype=float)
    cs = CubicSpline(pts[:, 0], pts[:, 1], bc_type="natural")
    # Dense per-span arc-length table; span endpoints land exactly on the
    # table so control points become exact samples.
    dense_x = []
    for a, b in zip(pts[:-1, 0], pts[1:, 0]):
        dense_x.append(np.linspace(a, b, 1025)[:-1])
    dense_x.append(pts[-1:, 0])
    dense_x = np.concatenate(dense_x)
    dense_z = cs(dense_x)
    step = np.hypot(np.diff(dense_x), np.diff(dense_z))
    dense_s = np.concatenate([[0.0], np.cumsum(step)])
    knot_s = dense_s[:: 1024][: len(pts)].copy()
    knot_s[-1] = dense_s[-1]
    s = _allocate_arclengths(knot_s, spec.sample_count)
    x = np.interp(s, dense_s, dense_x)
    # Snap knot samples to the exact control x before spline evaluation.
    for ks, kx in zip(knot_s, pts[:, 0]):
        x[s == ks] = kx
    z = cs(x)
    return PoseSeries(np.column_stack([x, z]), np.zeros_like(s), s / spec.speed)


def _rotation_trajectory(spec):
    p = spec.params
    t = spec.sample_count
    center = np.asarray(p.center, dtype=float)
    phis = p.direction * np.linspace(0.0, p.angular_range, t)
    arm = -center  # body origin starts at the world origin
    radius = float(np.hypot(*arm))
    cos, sin = np.cos(phis), np.sin(phis)
    positions = np.column_stack(
        [center[0] + cos * arm[0] - sin * arm[1], center[1] + sin * arm[0] + cos * arm[1]]
    )
    if p.angular_range > 0.0 and radius > 0.0:
        duration = p.angular_range * radius / spec.speed
    else:
        duration = 1.0  # degenerate rotation: constant poses over a nominal second
    return PoseSeries(positions, phis, np.linspace(0.0, duration, t))


def make_trajectory(spec: Trajectory) -> PoseSeries:
    """Sample a trajectory spec into poses at constant path speed.

    Timestamps are arc length divided by speed, so the speed between
    consecutive samples is exact even where sample spacing is uneven.
    Path corners and spline control points are always included as samples.
    """
    if spec.kind is TrajectoryKind.RECTANGLE:
        p = spec.params
        corners = [(0.0, 0.0)]
        for leg in [(0.0, -p.penetration), (p.shear, 0.0), (0.0, p.extraction)]:
            if leg != (0.0, 0.0):
                last = corners[-1]
                corners.append((last[0] + leg[0], last[1] + leg[1]))
        return _polyline_trajectory(corners, spec)
    if spec.kind is TrajectoryKind.CUBIC_SPLINE:
        return _spline_trajectory(spec)
    return _rotation_trajectory(spec)


@dataclass(frozen=True)
class SegmentState:
    """One segment's interaction state at one time step."""

    beta: float
    gamma: float
    depth: float
    area: float
    submerged: bool
    gamma_valid: bool = True


@dataclass(frozen=True, eq=False)
class SegmentStateSeries:
    """Per-step, per-segment interaction states as (t, M) arrays.

    ``outward_speed`` is the velocity component along the outward normal,
    kept for the optional leading-edge filter in the forward model.
    """

    beta: np.ndarray
    gamma: np.ndarray
    depth: np.ndarray
    area: np.ndarray
    submerged: np.ndarray
    gamma_valid: np.ndarray
    outward_speed: np.ndarray
    timestamps: np.ndarray

    @property
    def num_steps(self):
        return self.beta.shape[0]

    @property
    def num_segments(self):
        return self.beta.shape[1]

    def at_step(self, i):
        """Materialize step i as a list of SegmentState."""
        return [
            SegmentState(
                float(self.beta[i, m]),
                float(self.gamma[i, m]),
                float(self.depth[i, m]),
                float(self.area[i, m]),
                bool(self.submerged[i, m]),
                bool(self.gamma_valid[i, m]),
            )
            for m in range(self.num_segments)
        ]


def segment_states(toe: DiscretizedToe, poses: PoseSeries, surface_height: float = 0.0) -> SegmentStateSeries:
    """Compute (beta, gamma, depth, area) for every step and segment.

    Segment velocities use central finite differences of the segment world
    positions (one-sided at the series endpoints). Steps where a segment
    moves slower than ZERO_SPEED get gamma = 0 and gamma_valid = False.
    """
    t = len(poses)
    cos_a, sin_a = np.cos(poses.angles), np.sin(poses.angles)
    rot = np.empty((t, 2, 2))
    rot[:, 0, 0] = cos_a
    rot[:, 0, 1] = -sin_a
    rot[:, 1, 0] = sin_a
    rot[:, 1, 1] = cos_a
    centers = poses.positions[:, None, :] + np.einsum("tij,mj->tmi", rot, toe.centers)
    tangents = np.einsum("tij,mj->tmi", rot, toe.tangents)
    normals = np.einsum("tij,mj->tmi", rot, toe.normals)

    beta = normalize_beta(np.arctan2(tangents[..., 1], tangents[..., 0]))

    vel = np.zeros_like(centers)
    ts = poses.timestamps
    if t > 1:
        vel[0] = (centers[1] - centers[0]) / (ts[1] - ts[0])
        vel[-1] = (centers[-1] - centers[-2]) / (ts[-1] - ts[-2])
        if t > 2:
            vel[1:-1] = (centers[2:] - centers[:-2]) / (ts[2:] - ts[:-2])[:, None, None]

    # Tangent direction fixed by the beta fundamental domain, so the sign
    # of the tangential velocity is well defined.
    t_hat = np.stack([np.cos(beta), np.sin(beta)], axis=-1)
    n_hat = np.stack([-np.sin(beta), np.cos(beta)], axis=-1)
    v_t = np.einsum("tmi,tmi->tm", vel, t_hat)
    v_n = np.einsum("tmi,tmi->tm", vel, n_hat)
    speed = np.hypot(v_t, v_n)
    gamma_valid = speed >= ZERO_SPEED
    safe = np.where(gamma_valid, speed, 1.0)
    gamma = np.sign(v_t) * np.arccos(np.clip(np.abs(v_n) / safe, 0.0, 1.0))
    gamma = np.where(gamma_valid, gamma, 0.0)

    depth = np.maximum(0.0, surface_height - centers[..., 1])
    outward_speed = np.einsum("tmi,tmi->tm", vel, normals)
    area = np.broadcast_to(toe.areas, beta.shape).copy()
    return SegmentStateSeries(
        beta=beta,
        gamma=gamma,
        depth=depth,
        area=area,
        submerged=depth > 0.0,
        gamma_valid=gamma_valid,
        outward_speed=outward_speed,
        timestamps=ts.copy(),
    )


def series_to_csv(series: SegmentStateSeries, path):
    """Write a state series as CSV (submerged encoded as 0/1)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "segment", "beta", "gamma", "depth_m", "area_m2", "submerged"])
        for i in range(series.num_steps):
            for m in range(series.num_segments):
                writer.writerow(
                    [
                        i,
                        m,
                        format(series.beta[i, m], ".17g"),
                        format(series.gamma[i, m], ".17g"),
                        format(series.depth[i, m], ".17g"),
                        format(series.area[i, m], ".17g"),
                        int(series.submerged[i, m]),
                    ]
                )
