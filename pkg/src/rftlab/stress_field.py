"""Stress-per-depth maps over (beta, gamma): storage, interpolation, I/O.

A GridStressMap stores vertical and horizontal stress-per-depth values
(N/m^3) on a rectangular (beta, gamma) grid covering [-pi/2, pi/2]^2.
Evaluation wraps beta modulo pi into the axis domain and clamps gamma to
the axis range; inside the grid it interpolates bilinearly. Maps are
immutable after construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .kernels import KernelConfig, embed_many, jittered_cholesky, kernel_matrix

MAX_PRIOR_GRID = 64  # per-axis cap for dense prior draws


@dataclass(frozen=True, eq=False)
class GridStressMap:
    """Gridded stress-per-depth maps; values indexed [beta, gamma]."""

    beta_axis: np.ndarray
    gamma_axis: np.ndarray
    values_z: np.ndarray
    values_x: np.ndarray

    def __post_init__(self):
        for name in ("beta_axis", "gamma_axis", "values_z", "values_x"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.beta_axis.size < 2 or self.gamma_axis.size < 2:
            raise InvalidSpecError("axes need at least 2 nodes")
        if np.any(np.diff(self.beta_axis) <= 0) or np.any(np.diff(self.gamma_axis) <= 0):
            raise InvalidSpecError("axes must be strictly increasing")
        shape = (self.beta_axis.size, self.gamma_axis.size)
        if self.values_z.shape != shape or self.values_x.shape != shape:
            raise InvalidSpecError(f"value arrays must have shape {shape}")
        if not (np.all(np.isfinite(self.values_z)) and np.all(np.isfinite(self.values_x))):
            raise InvalidSpecError("stress values must be finite")

    @property
    def shape(self):
        return self.values_z.shape


def default_grid_axes(n: int = 37):
    """Uniform n-node axes over [-pi/2, pi/2] (default 5-degree spacing)."""
    axis = np.linspace(-np.pi / 2.0, np.pi / 2.0, n)
    return axis, axis.copy()


def _wrap_beta_to_axis(beta, axis):
    lo, hi = axis[0], axis[-1]
    out = np.asarray(beta, dtype=float).copy()
    outside = (out < lo) | (out > hi)
    if np.any(outside):
        shifted = lo + np.mod(out[outside] - lo, np.pi)
        out[outside] = np.minimum(shifted, hi)
    return out


def _interp_fractions(values_axis, axis):
    idx = np.clip(np.searchsorted(axis, values_axis, side="right") - 1, 0, axis.size - 2)
    frac = (values_axis - axis[idx]) / (axis[idx + 1] - axis[idx])
    return idx, np.clip(frac, 0.0, 1.0)


def eval_map_many(stress_map: GridStressMap, beta, gamma):
    """Bilinear evaluation at angle arrays.

    Returns (alpha_z, alpha_x, clamp_count) where clamp_count is the
    number of gamma values clamped into the axis range.
    """
    b = _wrap_beta_to_axis(np.asarray(beta, dtype=float).ravel(), stress_map.beta_axis)
    g = np.asarray(gamma, dtype=float).ravel()
    g_lo, g_hi = stress_map.gamma_axis[0], stress_map.gamma_axis[-1]
    clamp_count = int(np.count_nonzero((g < g_lo) | (g > g_hi)))
    g = np.clip(g, g_lo, g_hi)

    bi, bf = _interp_fractions(b, stress_map.beta_axis)
    gi, gf = _interp_fractions(g, stress_map.gamma_axis)
    out = []
    for values in (stress_map.values_z, stress_map.values_x):
        v00 = values[bi, gi]
        v01 = values[bi, gi + 1]
        v10 = values[bi + 1, gi]
        v11 = values[bi + 1, gi + 1]
        low = v00 * (1.0 - gf) + v01 * gf
        high = v10 * (1.0 - gf) + v11 * gf
        out.append(low * (1.0 - bf) + high * bf)
    return out[0], out[1], clamp_count


def eval_map(stress_map: GridStressMap, theta, diagnostics: dict | None = None):
    """Evaluate one (beta, gamma) pair; returns (alpha_z, alpha_x).

    Pass a dict as ``diagnostics`` to accumulate a "gamma_clamped" count.
    """
    beta, gamma = theta
    if not (np.isfinite(beta) and np.isfinite(gamma)):
        raise InvalidSpecError("theta must be finite")
    az, ax, clamped = eval_map_many(stress_map, [beta], [gamma])
    if diagnostics is not None:
        diagnostics["gamma_clamped"] = diagnostics.get("gamma_clamped", 0) + clamped
    return float(az[0]), float(ax[0])


def sample_prior_map(kernel_config: KernelConfig, seed: int, beta_axis, gamma_axis) -> GridStressMap:
    """Draw one (alpha_z, alpha_x) ground-truth map from the GP prior.

    The two components are independent draws with the given kernel,
    deterministic per seed. When the beta axis spans a full period the
    duplicated end row is tied to the first row so stored grids are
    exactly pi-periodic.
    """
    beta_axis = np.asarray(beta_axis, dtype=float)
    gamma_axis = np.asarray(gamma_axis, dtype=float)
    if beta_axis.size > MAX_PRIOR_GRID or gamma_axis.size > MAX_PRIOR_GRID:
        raise InvalidSpecError(f"prior draws limited to {MAX_PRIOR_GRID} nodes per axis")
    wrap = abs((beta_axis[-1] - beta_axis[0]) - np.pi) < 1e-12
    rows = beta_axis[:-1] if wrap else beta_axis
    bb, gg = np.meshgrid(rows, gamma_axis, indexing="ij")
    n = bb.size

    values = []
    if kernel_config.signal_variance == 0.0:
        values = [np.zeros((beta_axis.size, gamma_axis.size)) for _ in range(2)]
    else:
        feats = embed_many(bb, gg)
        cov = kernel_matrix(feats, feats, kernel_config)
        chol, _ = jittered_cholesky(cov)
        for comp in range(2):
            rng = np.random.default_rng([int(seed), comp])
            draw = (chol @ rng.standard_normal(n)).reshape(rows.size, gamma_axis.size)
            if wrap:
                draw = np.vstack([draw, draw[:1]])
            values.append(draw)
    return GridStressMap(beta_axis, gamma_axis, values[0], values[1])


def scale_map(base: GridStressMap, zeta_z: float, zeta_x: float) -> GridStressMap:
    """Scale the two components by terrain-specific factors."""
    return GridStressMap(
        base.beta_axis, base.gamma_axis, base.values_z * zeta_z, base.values_x * zeta_x
    )


@dataclass(frozen=True, eq=False)
class ScaledBaseMap:
    """A generic base profile with per-component scaling factors.

    ``residual`` optionally references a fitted residual model (opaque
    here; see the inverse solver's semi-parametric mode).
    """

    base: GridStressMap
    zeta_z: float
    zeta_x: float
    residual: object = field(default=None, compare=False)

    def as_grid(self) -> GridStressMap:
        return scale_map(self.base, self.zeta_z, self.zeta_x)


def write_map_csv(stress_map: GridStressMap, path):
    """Write a map in the exchange format (17-significant-digit decimals)."""

    def fmt(values):
        return ",".join(format(v, ".17g") for v in values)

    with open(path, "w") as fh:
        fh.write(f"# beta_axis: {fmt(stress_map.beta_axis)}\n")
        fh.write(f"# gamma_axis: {fmt(stress_map.gamma_axis)}\n")
        for label, values in (("values_z", stress_map.values_z), ("values_x", stress_map.values_x)):
            fh.write(f"# {label}\n")
            for row in values:
                fh.write(fmt(row) + "\n")


def read_map_csv(path) -> GridStressMap:
    """Read a map written by write_map_csv (bit-exact round trip)."""
    axes = {}
    blocks = {"values_z": [], "values_x": []}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                tag = line[1:].strip()
                if tag.startswith("beta_axis:"):
                    axes["beta"] = [float(v) for v in tag.split(":", 1)[1].split(",")]
                elif tag.startswith("gamma_axis:"):
                    axes["gamma"] = [float(v) for v in tag.split(":", 1)[1].split(",")]
                elif tag in blocks:
                    current = tag
                else:
                    raise InvalidSpecError(f"unknown map file section: {tag!r}")
            else:
                if current is None:
                    raise InvalidSpecError("map file has data before a values section")
                blocks[current].append([float(v) for v in line.split(",")])
    if "beta" not in axes or "gamma" not in axes:
        raise InvalidSpecError("map file is missing axis headers")
    return GridStressMap(
        np.array(axes["beta"]),
        np.array(axes["gamma"]),
        np.array(blocks["values_z"]),
        np.array(blocks["values_x"]),
    )
