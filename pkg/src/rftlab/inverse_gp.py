"""Composite-observation Gaussian-process solver for latent stress maps.

Each observed channel is a weighted sum of evaluations of the two latent
stress-per-depth fields at that step's segment angles: in force mode the
channels are (F_z, F_x) and each weight touches exactly one field; in
torque mode each joint-torque channel mixes both fields through the
contact Jacobian. All inference runs through one composite covariance

    C = V_z K_z V_z^T + V_x K_x V_x^T + noise_variance * I,

where V holds the per-segment observation coefficients. Factorization
uses escalating diagonal jitter; a factorized model is immutable and safe
for concurrent posterior queries.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .errors import DegenerateFitError, FactorizationError, InvalidSpecError
from .forward_model import CompositeDataset
from .kernels import KernelConfig, embed, embed_many, jittered_cholesky, kernel_eval, kernel_matrix
from .stress_field import GridStressMap, eval_map_many

__all__ = [
    "KernelConfig",
    "embed",
    "kernel_eval",
    "assemble_covariance",
    "GpModel",
    "log_marginal_likelihood",
    "log_marginal_likelihood_grad",
    "fit_hyperparameters",
    "fit_scaling",
    "fit_residual",
    "SemiParametricModel",
    "default_bounds",
]

SOLVE_TOLERANCE = 1e-8
_FAILED_OBJECTIVE = 1e25


def _coefficients(dataset: CompositeDataset):
    """Per-channel observation coefficients (t, M, channels) for each field."""
    w = dataset.weights
    if dataset.is_torque_mode:
        gz = w[..., None] * dataset.jacobians[:, :, 0, :]
        gx = w[..., None] * dataset.jacobians[:, :, 1, :]
    else:
        if dataset.num_channels != 2:
            raise InvalidSpecError("force-mode observations must have 2 channels (F_z, F_x)")
        t, m = w.shape
        gz = np.zeros((t, m, 2))
        gx = np.zeros((t, m, 2))
        gz[..., 0] = w
        gx[..., 1] = w
    return gz, gx


def _sandwich(coef, kernel, t, m, nch):
    """Dense (t*nch, t*nch) block of V K V^T from (t, M, nch) coefficients."""
    k4 = kernel.reshape(t, m, t * m)
    a = np.matmul(coef.transpose(0, 2, 1), k4)            # (t, nch, t*M)
    a = a.reshape(t * nch, t, m).transpose(1, 0, 2)       # (t, t*nch, M)
    c = np.matmul(a, coef)                                # (t, t*nch, nch)
    return c.transpose(1, 0, 2).reshape(t * nch, t * nch)


def _cross_coefficients(kstar, coef, t, m, nch):
    """(n_test, t*nch) matrix of V k_*(theta_j, Theta) rows."""
    n = kstar.shape[0]
    return np.einsum("pim,imc->pic", kstar.reshape(n, t, m), coef).reshape(n, t * nch)


class _Workspace:
    """Cached per-dataset quantities reused across likelihood evaluations."""

    def __init__(self, dataset: CompositeDataset):
        self.dataset = dataset
        self.t = dataset.num_steps
        self.m = dataset.num_segments
        self.nch = dataset.num_channels
        self.features = embed_many(dataset.angles[..., 0], dataset.angles[..., 1])
        self.coef_z, self.coef_x = _coefficients(dataset)
        diff = self.features[:, None, :] - self.features[None, :, :]
        self.sqdiff = np.ascontiguousarray((diff**2).transpose(2, 0, 1))  # (4, tM, tM)
        self.sqdiff_flat = self.sqdiff.reshape(4, -1)
        self.y = dataset.observations.ravel()

    def kernel(self, config: KernelConfig):
        ls = np.asarray(config.lengthscales)
        expo = np.tensordot(1.0 / ls**2, self.sqdiff, axes=1)
        return config.signal_variance * np.exp(-0.5 * expo)

    def covariance(self, kernel_z, kernel_x, noise_variance, kz=None, kx=None):
        kz = self.kernel(kernel_z) if kz is None else kz
        kx = self.kernel(kernel_x) if kx is None else kx
        c = _sandwich(self.coef_z, kz, self.t, self.m, self.nch)
        c += _sandwich(self.coef_x, kx, self.t, self.m, self.nch)
        c = 0.5 * (c + c.T)
        c[np.diag_indices_from(c)] += noise_variance
        return c


def _factorize_and_solve(cov, y, rel_start=1e-10, rel_max=1e-4):
    """Cholesky factor plus a verified solve of cov @ alpha = y.

    Escalates diagonal jitter until the factorization succeeds AND the
    (once-refined) solve meets the residual tolerance. Returns
    (chol, alpha, jitter).
    """
    dim = cov.shape[0]
    base = float(np.trace(cov)) / dim
    if not np.isfinite(base) or base <= 0.0:
        raise FactorizationError("covariance trace is non-positive; cannot factorize")
    norm_y = np.linalg.norm(y)
    jitters = [0.0] + [base * rel_start * 10.0**k for k in range(7)]
    eye = np.eye(dim)
    for jitter in jitters:
        work = cov if jitter == 0.0 else cov + jitter * eye
        try:
            chol = np.linalg.cholesky(work)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((chol, True), y, check_finite=False)
        if norm_y == 0.0:
            return chol, alpha, jitter
        residual = work @ alpha - y
        if np.linalg.norm(residual) > SOLVE_TOLERANCE * norm_y:
            alpha -= cho_solve((chol, True), residual, check_finite=False)
            residual = work @ alpha - y
        if np.linalg.norm(residual) <= SOLVE_TOLERANCE * norm_y:
            return chol, alpha, jitter
    raise FactorizationError(
        f"covariance solve failed the residual check even at jitter {jitters[-1]:.3e}"
    )


def assemble_covariance(
    dataset: CompositeDataset,
    kernel_z: KernelConfig,
    kernel_x: KernelConfig,
    noise_variance: float,
) -> np.ndarray:
    """Composite observation covariance (symmetric, before any jitter)."""
    if dataset.num_steps == 0:
        raise InvalidSpecError("dataset is empty")
    return _Workspace(dataset).covariance(kernel_z, kernel_x, noise_variance)


class GpModel:
    """Factorized composite GP over the two latent stress fields.

    Construction assembles and factorizes the composite covariance and
    caches the solved observation weights; the model is then read-only.
    An empty dataset yields the prior.
    """

    def __init__(
        self,
        dataset: CompositeDataset,
        kernel_z: KernelConfig,
        kernel_x: KernelConfig,
        noise_variance: float,
        _workspace: "_Workspace | None" = None,
    ):
        if noise_variance < 0.0:
            raise InvalidSpecError("noise_variance must be >= 0")
        self.dataset = dataset
        self.kernel_z = kernel_z
        self.kernel_x = kernel_x
        self.noise_variance = float(noise_variance)
        self.fit_info = {}
        self._empty = dataset.num_steps == 0
        if self._empty:
            self.jitter = 0.0
            self._mll = None
            return
        ws = _workspace if _workspace is not None else _Workspace(dataset)
        self._t, self._m, self._nch = ws.t, ws.m, ws.nch
        self._features = ws.features
        self._coef = {"z": ws.coef_z, "x": ws.coef_x}
        cov = ws.covariance(kernel_z, kernel_x, noise_variance)
        y = ws.y
        self._chol, self._alpha, self.jitter = _factorize_and_solve(cov, y)
        half_logdet = float(np.sum(np.log(np.diag(self._chol))))
        self._mll = (
            -0.5 * float(y @ self._alpha)
            - half_logdet
            - 0.5 * y.size * math.log(2.0 * math.pi)
        )

    def _config(self, component):
        if component not in ("z", "x"):
            raise InvalidSpecError("component must be 'z' or 'x'")
        return self.kernel_z if component == "z" else self.kernel_x

    def posterior_stress_many(self, beta, gamma, component="z"):
        """Posterior mean/variance arrays at angle arrays.

        Returns (means, variances, floor_hits); variances are clamped at
        zero and floor_hits counts how many query points hit the clamp.
        """
        cfg = self._config(component)
        b = np.asarray(beta, dtype=float).ravel()
        g = np.asarray(gamma, dtype=float).ravel()
        if self._empty:
            return np.zeros(b.size), np.full(b.size, cfg.signal_variance), 0
        kstar = kernel_matrix(embed_many(b, g), self._features, cfg)
        u = _cross_coefficients(kstar, self._coef[component], self._t, self._m, self._nch)
        mean = u @ self._alpha
        v = cho_solve((self._chol, True), u.T, check_finite=False)
        var = cfg.signal_variance - np.einsum("ij,ji->i", u, v)
        floor_hits = int(np.count_nonzero(var < 0.0))
        return mean, np.maximum(var, 0.0), floor_hits

    def posterior_stress(self, theta, component="z"):
        """Posterior (mean, variance) of one stress field at one angle pair."""
        beta, gamma = theta
        mean, var, _ = self.posterior_stress_many([beta], [gamma], component)
        return float(mean[0]), float(var[0])

    def posterior_stress_grid(self, beta_axis, gamma_axis):
        """Posterior over a full grid.

        Returns (mean_map, variance_z, variance_x, diagnostics) where the
        variance grids match the map shape and diagnostics counts variance
        floor hits.
        """
        beta_axis = np.asarray(beta_axis, dtype=float)
        gamma_axis = np.asarray(gamma_axis, dtype=float)
        bb, gg = np.meshgrid(beta_axis, gamma_axis, indexing="ij")
        shape = bb.shape
        means, variances, hits = {}, {}, 0
        for comp in ("z", "x"):
            mean, var, floor = self.posterior_stress_many(bb, gg, comp)
            means[comp] = mean.reshape(shape)
            variances[comp] = var.reshape(shape)
            hits += floor
        mean_map = GridStressMap(beta_axis, gamma_axis, means["z"], means["x"])
        return mean_map, variances["z"], variances["x"], {"variance_floor_hits": hits}

    def posterior_force(self, angles, weights):
        """Predicted (F_z, F_x) mean and variance for a test configuration.

        ``angles`` is (M, 2) and ``weights`` (M,); variances assume
        independence between segments.
        """
        angles = np.asarray(angles, dtype=float).reshape(-1, 2)
        weights = np.asarray(weights, dtype=float).ravel()
        mean = np.zeros(2)
        var = np.zeros(2)
        for k, comp in enumerate(("z", "x")):
            mu, sigma2, _ = self.posterior_stress_many(angles[:, 0], angles[:, 1], comp)
            mean[k] = float(weights @ mu)
            var[k] = float((weights**2) @ sigma2)
        return mean, var

    def log_marginal_likelihood(self):
        if self._mll is None:
            raise InvalidSpecError("marginal likelihood undefined for an empty dataset")
        return self._mll


def log_marginal_likelihood(
    dataset: CompositeDataset,
    kernel_z: KernelConfig,
    kernel_x: KernelConfig,
    noise_variance: float,
) -> float:
    """Log marginal likelihood of the composite observations."""
    return GpModel(dataset, kernel_z, kernel_x, noise_variance).log_marginal_likelihood()


def _pack(kernel_z, kernel_x, noise_variance, share):
    parts = [math.log(kernel_z.signal_variance)] + [math.log(v) for v in kernel_z.lengthscales]
    if not share:
        parts += [math.log(kernel_x.signal_variance)] + [
            math.log(v) for v in kernel_x.lengthscales
        ]
    parts.append(math.log(noise_variance))
    return np.array(parts)


def _unpack(theta, share):
    kz = KernelConfig(math.exp(theta[0]), tuple(math.exp(v) for v in theta[1:5]))
    if share:
        return kz, kz, math.exp(theta[5])
    kx = KernelConfig(math.exp(theta[5]), tuple(math.exp(v) for v in theta[6:10]))
    return kz, kx, math.exp(theta[10])


def _mll_and_grad(ws: _Workspace, kernel_z, kernel_x, noise_variance):
    """Likelihood and its gradient w.r.t. the packed log-parameters."""
    kz = ws.kernel(kernel_z)
    kx = ws.kernel(kernel_x)
    cov = ws.covariance(kernel_z, kernel_x, noise_variance, kz=kz, kx=kx)
    y = ws.y
    chol, alpha, _ = _factorize_and_solve(cov, y)
    mll = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * y.size * math.log(2.0 * math.pi)
    )
    cinv = cho_solve((chol, True), np.eye(y.size), check_finite=False)
    alpha_steps = alpha.reshape(ws.t, ws.nch)
    s4 = cinv.reshape(ws.t, ws.nch, ws.t, ws.nch)

    def component_grads(coef, kernel, config):
        a = np.einsum("imc,ic->im", coef, alpha_steps).ravel()
        q = np.einsum("imc,icjd,jnd->imjn", coef, s4, coef, optimize=True)
        q = q.reshape(a.size, a.size)
        # Data and trace terms reduce to weighted sums over the squared
        # feature differences; one GEMV covers all four lengthscales.
        pk = kernel * a[:, None] * a[None, :]
        qk = q * kernel
        data_terms = ws.sqdiff_flat @ pk.ravel()
        trace_terms = ws.sqdiff_flat @ qk.ravel()
        ls2 = np.asarray(config.lengthscales) ** 2
        grads = [0.5 * (float(pk.sum()) - float(qk.sum()))]
        grads += list(0.5 * (data_terms - trace_terms) / ls2)
        return grads

    grad_z = component_grads(ws.coef_z, kz, kernel_z)
    grad_x = component_grads(ws.coef_x, kx, kernel_x)
    grad_noise = 0.5 * noise_variance * (float(alpha @ alpha) - float(np.trace(cinv)))
    return mll, grad_z, grad_x, grad_noise


def log_marginal_likelihood_grad(
    dataset: CompositeDataset,
    kernel_z: KernelConfig,
    kernel_x: KernelConfig,
    noise_variance: float,
):
    """Likelihood and gradient w.r.t. log-hyperparameters.

    Gradient order: [log sv_z, log l_z1..4, log sv_x, log l_x1..4,
    log noise_variance].
    """
    if dataset.num_steps == 0:
        raise InvalidSpecError("dataset is empty")
    ws = _Workspace(dataset)
    mll, gz, gx, gn = _mll_and_grad(ws, kernel_z, kernel_x, noise_variance)
    return mll, np.array(gz + gx + [gn])


def default_bounds(dataset: CompositeDataset):
    """Scale-aware hyperparameter bounds derived from the dataset.

    The stress scale divides the observation spread by the mean total
    segment weight so that signal-variance bounds live in stress units.
    """
    obs_scale = float(np.std(dataset.observations))
    if obs_scale <= 0.0:
        obs_scale = 1.0
    weight_scale = float(np.mean(dataset.weights.sum(axis=1))) if dataset.num_steps else 0.0
    if weight_scale <= 0.0:
        weight_scale = 1.0
    stress_scale = obs_scale / weight_scale
    return {
        "signal_variance": (1e-4 * stress_scale**2, 1e4 * stress_scale**2),
        "lengthscale": (0.05, 10.0),
        "noise_variance": (1e-10 * obs_scale**2, obs_scale**2),
        "stress_scale": stress_scale,
        "obs_scale": obs_scale,
    }


def fit_hyperparameters(
    dataset: CompositeDataset,
    init_z: KernelConfig | None = None,
    init_x: KernelConfig | None = None,
    noise_variance_init: float | None = None,
    bounds: dict | None = None,
    restarts: int = 3,
    seed: int = 0,
    share_kernels: bool = False,
) -> GpModel:
    """Maximize the marginal likelihood over kernel and noise parameters.

    Optimization runs in log-parameter space with analytic gradients
    (L-BFGS-B), multi-started from the init plus seeded log-uniform draws
    within bounds. Deterministic per seed; ties between restarts go to the
    lowest restart index. Returns the factorized model at the best
    parameters.
    """
    if dataset.num_steps == 0:
        raise InvalidSpecError("cannot fit an empty dataset")
    if restarts < 1:
        raise InvalidSpecError("restarts must be >= 1")
    limits = dict(default_bounds(dataset))
    if bounds:
        limits.update(bounds)
    for key in ("signal_variance", "lengthscale", "noise_variance"):
        lo, hi = limits[key]
        if not (0.0 < lo < hi):
            raise InvalidSpecError(f"bounds for {key} must be positive and ordered")

    stress_scale = limits["stress_scale"]
    if init_z is None:
        init_z = KernelConfig(stress_scale**2, (1.0, 1.0, 1.0, 1.0))
    if init_x is None:
        init_x = init_z
    if noise_variance_init is None:
        noise_variance_init = 1e-4 * limits["obs_scale"] ** 2

    def clip_cfg(cfg):
        sv = float(np.clip(cfg.signal_variance, *limits["signal_variance"]))
        ls = tuple(float(np.clip(v, *limits["lengthscale"])) for v in cfg.lengthscales)
        return KernelConfig(sv, ls)

    init_z = clip_cfg(init_z)
    init_x = clip_cfg(init_x)
    noise_variance_init = float(np.clip(noise_variance_init, *limits["noise_variance"]))

    kernel_box = [np.log(limits["signal_variance"])] + [np.log(limits["lengthscale"])] * 4
    log_bounds = kernel_box if share_kernels else kernel_box * 2
    log_bounds = log_bounds + [np.log(limits["noise_variance"])]
    log_bounds = [tuple(b) for b in log_bounds]

    ws = _Workspace(dataset)

    def objective(theta):
        kz, kx, noise = _unpack(theta, share_kernels)
        try:
            mll, gz, gx, gn = _mll_and_grad(ws, kz, kx, noise)
        except FactorizationError:
            return _FAILED_OBJECTIVE, np.zeros_like(theta)
        if share_kernels:
            grad = [a + b for a, b in zip(gz, gx)] + [gn]
        else:
            grad = gz + gx + [gn]
        return -mll, -np.array(grad)

    starts = [_pack(init_z, init_x, noise_variance_init, share_kernels)]
    for r in range(1, restarts):
        rng = np.random.default_rng([int(seed), r])
        lo = np.array([b[0] for b in log_bounds])
        hi = np.array([b[1] for b in log_bounds])
        starts.append(lo + rng.random(lo.size) * (hi - lo))

    best = None
    for idx, x0 in enumerate(starts):
        result = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=log_bounds,
            options={"maxiter": 200},
        )
        if result.fun >= _FAILED_OBJECTIVE:
            continue
        if best is None or result.fun < best[0]:
            best = (result.fun, idx, result.x)
    if best is None:
        raise FactorizationError("all hyperparameter restarts failed to factorize")
    kz, kx, noise = _unpack(best[2], share_kernels)
    model = GpModel(dataset, kz, kx, noise, _workspace=ws)
    model.fit_info = {
        "log_marginal_likelihood": -best[0],
        "restart_index": best[1],
        "restarts": restarts,
        "share_kernels": share_kernels,
    }
    return model


def _base_observation_design(dataset: CompositeDataset, base_map: GridStressMap):
    """Columns (d_z, d_x) of predicted observations per unit scaling factor."""
    az, ax, _ = eval_map_many(base_map, dataset.angles[..., 0], dataset.angles[..., 1])
    t, m = dataset.weights.shape
    gz, gx = _coefficients(dataset)
    dz = np.einsum("imc,im->ic", gz, az.reshape(t, m)).ravel()
    dx = np.einsum("imc,im->ic", gx, ax.reshape(t, m)).ravel()
    return dz, dx


def fit_scaling(dataset: CompositeDataset, base_map: GridStressMap):
    """Least-squares scaling factors (zeta_z, zeta_x) against a base map.

    Base-map predictions are linear in the scaling factors, so this is a
    closed-form two-parameter solve.
    """
    if dataset.num_steps == 0:
        raise InvalidSpecError("dataset is empty")
    dz, dx = _base_observation_design(dataset, base_map)
    design = np.column_stack([dz, dx])
    solution, _, rank, _ = np.linalg.lstsq(design, dataset.observations.ravel(), rcond=None)
    if rank < 2:
        raise DegenerateFitError("scaling design is rank deficient (base predictions degenerate)")
    return float(solution[0]), float(solution[1])


@dataclass(frozen=True, eq=False)
class SemiParametricModel:
    """Scaled base profile plus a residual GP fitted on the discrepancy."""

    base_map: GridStressMap
    zeta_z: float
    zeta_x: float
    residual: GpModel

    def _scale(self, component):
        return self.zeta_z if component == "z" else self.zeta_x

    def predict_stress(self, theta, component="z"):
        """Full-model (mean, variance) at one angle pair."""
        az, ax, _ = eval_map_many(self.base_map, [theta[0]], [theta[1]])
        base = float(az[0]) if component == "z" else float(ax[0])
        mean, var = self.residual.posterior_stress(theta, component)
        return self._scale(component) * base + mean, var

    def predict_grid(self, beta_axis, gamma_axis):
        """Full-model grid prediction; returns (map, var_z, var_x, diagnostics)."""
        residual_map, var_z, var_x, diag = self.residual.posterior_stress_grid(
            beta_axis, gamma_axis
        )
        bb, gg = np.meshgrid(beta_axis, gamma_axis, indexing="ij")
        az, ax, _ = eval_map_many(self.base_map, bb, gg)
        full = GridStressMap(
            residual_map.beta_axis,
            residual_map.gamma_axis,
            self.zeta_z * az.reshape(bb.shape) + residual_map.values_z,
            self.zeta_x * ax.reshape(bb.shape) + residual_map.values_x,
        )
        return full, var_z, var_x, diag


def fit_residual(
    dataset: CompositeDataset,
    base_map: GridStressMap,
    zeta,
    **fit_kwargs,
) -> SemiParametricModel:
    """Stage-2 of the semi-parametric fit: GP on scaled-base residuals.

    ``zeta`` is the fixed (zeta_z, zeta_x) from stage 1; residual
    observations are the measured observations minus the scaled-base
    prediction, and the residual GP is fitted by fit_hyperparameters.
    """
    zeta_z, zeta_x = float(zeta[0]), float(zeta[1])
    dz, dx = _base_observation_design(dataset, base_map)
    base_pred = (zeta_z * dz + zeta_x * dx).reshape(dataset.observations.shape)
    residual_dataset = dataset.with_observations(dataset.observations - base_pred)
    model = fit_hyperparameters(residual_dataset, **fit_kwargs)
    return SemiParametricModel(base_map, zeta_z, zeta_x, model)
