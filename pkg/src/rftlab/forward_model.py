"""Forward contact forces, measurement noise, leg kinematics, datasets.

The forward model is quasi-static: the net contact force at a step is the
depth-and-area weighted sum of stress-map evaluations over all submerged
segments. Joint torques relate to toe forces through the five-bar leg
Jacobian (tau = J^T F); measurement noise is multiplicative Gaussian with
mean-1 scale factors, seeded per (seed, step, channel) so that subsetting
a run never reshuffles the noise.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidSpecError, SingularConfigurationError
from .geometry import SegmentState, SegmentStateSeries
from .stress_field import GridStressMap, eval_map_many

CONDITION_LIMIT = 1e8  # Jacobians above this condition number count as singular
LEADING_EDGE_EPS = 1e-12


@dataclass(frozen=True)
class ForceSample:
    """Net contact force at one step, vertical then horizontal, newtons."""

    f_z: float
    f_x: float
    step_index: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.f_z) and math.isfinite(self.f_x)):
            raise InvalidSpecError("force components must be finite")


def forward_force(states, stress_map: GridStressMap, step_index: int = 0) -> ForceSample:
    """Sum per-segment stress contributions for one step's states.

    Segments above the surface (or with undefined motion direction)
    contribute nothing.
    """
    total_z = 0.0
    total_x = 0.0
    for s in states:
        if not s.submerged or not s.gamma_valid:
            continue
        az, ax, _ = eval_map_many(stress_map, [s.beta], [s.gamma])
        w = s.depth * s.area
        total_z += w * float(az[0])
        total_x += w * float(ax[0])
    return ForceSample(total_z, total_x, step_index)


def forward_series(
    series: SegmentStateSeries, stress_map: GridStressMap, leading_edge: bool = False
) -> np.ndarray:
    """Forward forces for a whole state series; returns (t, 2) as (F_z, F_x).

    With ``leading_edge`` only segments whose velocity pushes along their
    outward normal contribute.
    """
    az, ax, _ = eval_map_many(stress_map, series.beta, series.gamma)
    shape = series.beta.shape
    weights = series.depth * series.area
    active = series.submerged & series.gamma_valid
    if leading_edge:
        active &= series.outward_speed > LEADING_EDGE_EPS
    weights = np.where(active, weights, 0.0)
    f_z = (weights * az.reshape(shape)).sum(axis=1)
    f_x = (weights * ax.reshape(shape)).sum(axis=1)
    return np.column_stack([f_z, f_x])


def _noise_scale(level, seed, step, channel):
    rng = np.random.default_rng([int(seed), int(step), int(channel)])
    return 1.0 + math.sqrt(level) * rng.standard_normal()


def inject_noise(sample: ForceSample, level: float, seed: int) -> ForceSample:
    """Multiply each component by an independent Normal(1, level) scale.

    ``level`` is the variance of the scale factor; 0 returns the sample
    unchanged.
    """
    if level < 0.0:
        raise InvalidSpecError("noise level must be >= 0")
    if level == 0.0:
        return sample
    return ForceSample(
        sample.f_z * _noise_scale(level, seed, sample.step_index, 0),
        sample.f_x * _noise_scale(level, seed, sample.step_index, 1),
        sample.step_index,
    )


def inject_noise_series(observations: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Noise injection for a (t, channels) observation array."""
    if level < 0.0:
        raise InvalidSpecError("noise level must be >= 0")
    obs = np.asarray(observations, dtype=float)
    if level == 0.0:
        return obs.copy()
    out = np.empty_like(obs)
    for i in range(obs.shape[0]):
        for c in range(obs.shape[1]):
            out[i, c] = obs[i, c] * _noise_scale(level, seed, i, c)
    return out


@dataclass(frozen=True)
class FiveBarParams:
    """Link lengths of the symmetric five-bar leg plus the motor constant."""

    l1: float = 0.12
    l2: float = 0.25
    l3: float = 0.05
    torque_constant: float = 0.0973  # N*m/A

    def __post_init__(self):
        if min(self.l1, self.l2, self.l3) <= 0.0:
            raise InvalidSpecError("link lengths must be positive")


def _leg_angles(phi1, phi2):
    return 0.5 * (phi1 + phi2), 0.5 * (-phi1 + phi2)


def _composite_length(gamma, params):
    root = params.l2**2 - (params.l1 * math.sin(gamma)) ** 2
    if root <= 0.0:
        raise SingularConfigurationError(
            f"workspace violation: l2^2 - l1^2 sin^2(gamma) = {root:.3e} at gamma={gamma:.4f}"
        )
    return params.l3 + params.l1 * math.cos(gamma) + math.sqrt(root)


def fivebar_forward_kinematics(phi1: float, phi2: float, params: FiveBarParams):
    """Toe position (x, y) in the leg frame; y measured away from the hip."""
    theta, gamma = _leg_angles(phi1, phi2)
    length = _composite_length(gamma, params)
    return length * math.sin(theta), length * math.cos(theta)


def fivebar_jacobian(phi1: float, phi2: float, params: FiveBarParams) -> np.ndarray:
    """Closed-form 2x2 Jacobian d(x, y)/d(phi1, phi2) of the five-bar leg."""
    theta, gamma = _leg_angles(phi1, phi2)
    length = _composite_length(gamma, params)
    root = math.sqrt(params.l2**2 - (params.l1 * math.sin(gamma)) ** 2)
    phi_term = -params.l1 * math.sin(gamma) * (1.0 + params.l1 * math.cos(gamma) / root)
    st, ct = math.sin(theta), math.cos(theta)
    return 0.5 * np.array(
        [
            [-phi_term * st + length * ct, phi_term * st + length * ct],
            [-phi_term * ct - length * st, phi_term * ct - length * st],
        ]
    )


def fivebar_inverse_kinematics(x: float, y: float, params: FiveBarParams):
    """Joint angles (phi1, phi2) reaching leg-frame position (x, y)."""
    reach = math.hypot(x, y)
    arm = reach - params.l3
    if arm <= 0.0:
        raise SingularConfigurationError(f"target ({x:.4f}, {y:.4f}) inside the hip offset")
    cos_gamma = (arm**2 + params.l1**2 - params.l2**2) / (2.0 * arm * params.l1)
    if not -1.0 < cos_gamma < 1.0:
        raise SingularConfigurationError(
            f"target ({x:.4f}, {y:.4f}) outside the five-bar workspace"
        )
    gamma = math.acos(cos_gamma)
    theta = math.atan2(x, y)
    return theta - gamma, theta + gamma


def jacobian_condition(jac: np.ndarray) -> float:
    return float(np.linalg.cond(jac))


def force_to_torque(jac: np.ndarray, force) -> np.ndarray:
    """Joint torques from a toe force via the transpose Jacobian."""
    return jac.T @ np.asarray(force, dtype=float)


def torque_to_force(jac: np.ndarray, torque) -> np.ndarray:
    """Toe force from joint torques; requires a well-conditioned Jacobian."""
    if jacobian_condition(jac) > CONDITION_LIMIT:
        raise SingularConfigurationError(
            f"Jacobian {jac.tolist()} is singular (condition > {CONDITION_LIMIT:.0e})"
        )
    return np.linalg.solve(jac.T, np.asarray(torque, dtype=float))


def torque_from_current(currents, torque_constant: float = 0.0973) -> np.ndarray:
    """Joint torque estimates from motor currents."""
    return torque_constant * np.asarray(currents, dtype=float)


def contact_force_jacobian(kinematic_jac: np.ndarray) -> np.ndarray:
    """Map world-frame (F_z, F_x) contact forces to joint torques.

    Returns B with tau = B^T [F_z, F_x]; the leg frame has y pointing away
    from the hip (downward in the world), so F_y_leg = -F_z_world and
    F_x_leg = F_x_world.
    """
    flip = np.array([[0.0, -1.0], [1.0, 0.0]])
    return flip @ kinematic_jac


@dataclass(frozen=True, eq=False)
class CompositeDataset:
    """Aggregated observations with per-segment angle/weight annotations.

    ``observations`` is (t, channels): (F_z, F_x) per step in force mode,
    joint torques in torque mode. ``jacobians`` (t, M, 2, channels) is
    present only in torque mode and carries each segment's contact force
    Jacobian. Weights are depth*area in m^3 and are zero for segments that
    do not touch the terrain.
    """

    angles: np.ndarray        # (t, M, 2) -> (beta, gamma)
    weights: np.ndarray       # (t, M)
    observations: np.ndarray  # (t, channels)
    noise_variance: float
    jacobians: np.ndarray | None = None

    def __post_init__(self):
        for name in ("angles", "weights", "observations"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.jacobians is not None:
            object.__setattr__(self, "jacobians", np.asarray(self.jacobians, dtype=float))
        t, m = self.weights.shape
        if self.angles.shape != (t, m, 2):
            raise InvalidSpecError("angles must have shape (t, M, 2)")
        if self.observations.shape[0] != t:
            raise InvalidSpecError("observation count must match step count")
        if self.jacobians is not None and self.jacobians.shape != (
            t,
            m,
            2,
            self.observations.shape[1],
        ):
            raise InvalidSpecError("jacobians must have shape (t, M, 2, channels)")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0.0):
            raise InvalidSpecError("weights must be finite and non-negative")
        if not np.all(np.isfinite(self.angles)) or not np.all(np.isfinite(self.observations)):
            raise InvalidSpecError("angles and observations must be finite")
        if self.noise_variance < 0.0:
            raise InvalidSpecError("noise_variance must be >= 0")

    @property
    def num_steps(self):
        return self.weights.shape[0]

    @property
    def num_segments(self):
        return self.weights.shape[1]

    @property
    def num_channels(self):
        return self.observations.shape[1]

    @property
    def is_torque_mode(self):
        return self.jacobians is not None

    def step_subset(self, indices) -> "CompositeDataset":
        idx = np.asarray(indices)
        jac = self.jacobians[idx] if self.jacobians is not None else None
        return CompositeDataset(
            self.angles[idx], self.weights[idx], self.observations[idx], self.noise_variance, jac
        )

    def with_observations(self, observations) -> "CompositeDataset":
        return replace(self, observations=np.asarray(observations, dtype=float))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.angles, self.weights, self.observations):
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.jacobians is not None:
            h.update(np.ascontiguousarray(self.jacobians).tobytes())
        h.update(format(self.noise_variance, ".17g").encode())
        return h.hexdigest()


def assemble_dataset(
    series: SegmentStateSeries,
    observations,
    noise_variance: float,
    jacobians=None,
) -> CompositeDataset:
    """Bundle a state series with its observations into a dataset.

    ``observations`` may be a (t, channels) array or a list of
    ForceSample. Weights are recomputed as depth*area and zeroed where a
    segment is dry or its motion direction is undefined.
    """
    if observations is not None and len(observations) and isinstance(observations[0], ForceSample):
        observations = np.array([[s.f_z, s.f_x] for s in observations])
    observations = np.asarray(observations, dtype=float).reshape(series.num_steps, -1)
    weights = series.depth * series.area
    weights = np.where(series.submerged & series.gamma_valid, weights, 0.0)
    angles = np.stack([series.beta, series.gamma], axis=-1)
    return CompositeDataset(angles, weights, observations, noise_variance, jacobians)


def preprocess_force_log(raw, baseline, window: int = 11) -> np.ndarray:
    """Baseline-subtract and smooth a measured force log.

    ``raw`` and ``baseline`` are (n,), (n, channels), or
    (trials, n, channels) arrays; trials are averaged first. The filter is
    a centered moving average with an edge-truncated window (odd, >= 1).
    """
    if window < 1 or window % 2 == 0:
        raise InvalidSpecError("window must be odd and >= 1")

    def prepare(a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        elif a.ndim == 3:
            a = a.mean(axis=0)
        elif a.ndim != 2:
            raise InvalidSpecError("expected 1-D, 2-D, or 3-D force log")
        return a

    raw = prepare(raw)
    baseline = prepare(baseline)
    if raw.shape != baseline.shape:
        raise InvalidSpecError(f"raw {raw.shape} and baseline {baseline.shape} shapes differ")
    diff = raw - baseline
    if window == 1:
        return diff
    ones = np.ones(window)
    counts = np.convolve(np.ones(diff.shape[0]), ones, mode="same")
    out = np.empty_like(diff)
    for c in range(diff.shape[1]):
        out[:, c] = np.convolve(diff[:, c], ones, mode="same") / counts
    return out


def write_force_log(path, timestamps, forces):
    """Write `t_s,f_x_N,f_z_N` rows; ``forces`` is (t, 2) as (F_z, F_x)."""
    forces = np.asarray(forces, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "f_x_N", "f_z_N"])
        for t, (fz, fx) in zip(timestamps, forces):
            writer.writerow([format(t, ".17g"), format(fx, ".17g"), format(fz, ".17g")])


def read_force_log(path):
    """Read a force log; returns (timestamps, (t, 2) forces as (F_z, F_x))."""
    times, rows = [], []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            times.append(float(rec["t_s"]))
            rows.append([float(rec["f_z_N"]), float(rec["f_x_N"])])
    return np.array(times), np.array(rows).reshape(-1, 2)


def write_torque_log(path, timestamps, torques, joint_angles):
    """Write `t_s,tau1_Nm,tau2_Nm,phi1_rad,phi2_rad` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "tau1_Nm", "tau2_Nm", "phi1_rad", "phi2_rad"])
        for t, tau, phi in zip(timestamps, torques, joint_angles):
            writer.writerow(
                [format(t, ".17g")]
                + [format(v, ".17g") for v in tau]
                + [format(v, ".17g") for v in phi]
            )


def read_torque_log(path):
    """Read a torque log; returns (timestamps, (t, 2) torques, (t, 2) angles)."""
    times, taus, phis = [], [], []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            times.append(float(rec["t_s"]))
            taus.append([float(rec["tau1_Nm"]), float(rec["tau2_Nm"])])
            phis.append([float(rec["phi1_rad"]), float(rec["phi2_rad"])])
    return np.array(times), np.array(taus).reshape(-1, 2), np.array(phis).reshape(-1, 2)
