"""Periodic feature embedding and the squared-exponential kernel over it.

Angle pairs theta = (beta, gamma) are embedded as
(sin 2*beta, cos 2*beta, sin gamma, cos gamma), which makes beta
pi-periodic while keeping gamma non-periodic over its working range. The
kernel is an anisotropic RBF over the four embedded features.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FactorizationError, InvalidSpecError

EMBED_DIM = 4


@dataclass(frozen=True)
class KernelConfig:
    """Signal variance plus one lengthscale per embedded feature.

    signal_variance = 0 is allowed (degenerate, zero-variance prior);
    lengthscales must be positive.
    """

    signal_variance: float = 1.0
    lengthscales: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_variance < 0.0:
            raise InvalidSpecError("signal_variance must be >= 0")
        if len(ls) != EMBED_DIM or any(v <= 0.0 for v in ls):
            raise InvalidSpecError(f"need {EMBED_DIM} positive lengthscales")


def embed(theta) -> np.ndarray:
    """Embed one (beta, gamma) pair as a 4-vector."""
    beta, gamma = theta
    return np.array(
        [np.sin(2.0 * beta), np.cos(2.0 * beta), np.sin(gamma), np.cos(gamma)]
    )


def embed_many(beta, gamma) -> np.ndarray:
    """Embed arrays of angles; returns (n, 4) for flattened inputs."""
    b = np.asarray(beta, dtype=float).ravel()
    g = np.asarray(gamma, dtype=float).ravel()
    return np.column_stack([np.sin(2.0 * b), np.cos(2.0 * b), np.sin(g), np.cos(g)])


def kernel_matrix(e1: np.ndarray, e2: np.ndarray, config: KernelConfig) -> np.ndarray:
    """Kernel matrix between two sets of embedded features."""
    ls = np.asarray(config.lengthscales)
    d2 = cdist(e1 / ls, e2 / ls, metric="sqeuclidean")
    return config.signal_variance * np.exp(-0.5 * d2)


def kernel_eval(theta, theta2, config: KernelConfig) -> float:
    """Kernel value between two (beta, gamma) pairs."""
    return float(kernel_matrix(embed(theta)[None, :], embed(theta2)[None, :], config)[0, 0])


def jittered_cholesky(a: np.ndarray, rel_start: float = 1e-10, rel_max: float = 1e-4):
    """Lower Cholesky factor of a symmetric matrix, escalating diagonal jitter.

    Tries the matrix as-is first; on failure adds rel_start * trace/dim to
    the diagonal and escalates tenfold up to rel_max * trace/dim before
    raising FactorizationError. Returns (L, jitter_used).
    """
    dim = a.shape[0]
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    base = float(np.trace(a)) / dim
    if not np.isfinite(base) or base <= 0.0:
        raise FactorizationError("covariance trace is non-positive; cannot jitter")
    jitter = rel_start * base
    eye = np.eye(dim)
    while jitter <= rel_max * base * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(a + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"factorization failed at maximum jitter {rel_max * base:.3e} (dim {dim})"
    )
