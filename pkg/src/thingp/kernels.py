"""Covariance functions, anisotropic input scaling, and Gram-matrix assembly.

All models in the package share the same three ingredients assembled here:
per-dimension lengthscale scaling of the inputs, a radial kernel evaluated on
the scaled Euclidean distance, and a nugget on the diagonal.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

MATERN15 = "matern-1.5"
SQEXP = "squared-exponential"
COMPACT = "compact-rbf"
FAMILIES = (MATERN15, SQEXP, COMPACT)

SQRT3 = np.sqrt(3.0)

# Jitter policy for near-singular Gram matrices: start at 1e-8 * sigma_f2,
# multiply by 10, at most 3 retries.
JITTER_START = 1e-8
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3


@dataclass(frozen=True)
class KernelSpec:
    """Covariance family; the compact kernel carries its support radius."""

    family: str = MATERN15
    support_radius: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family == COMPACT:
            if self.support_radius is None or self.support_radius <= 0:
                raise ConfigError("compact-rbf kernel requires a strictly positive support radius")


@dataclass
class Hyperparameters:
    """Per-dimension lengthscales, signal variance, nugget variance."""

    lengthscales: np.ndarray
    sigma_f2: float
    sigma_n2: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(self.lengthscales <= 0) or not np.all(np.isfinite(self.lengthscales)):
            raise ConfigError("lengthscales must be positive and finite")
        if self.sigma_f2 <= 0:
            raise ConfigError("signal variance must be positive")
        if self.sigma_n2 < 0:
            raise ConfigError("nugget variance must be non-negative")

    @property
    def d(self) -> int:
        return self.lengthscales.shape[0]

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales),
                               [np.log(self.sigma_f2), np.log(max(self.sigma_n2, 1e-300))]])

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "Hyperparameters":
        theta = np.asarray(theta, dtype=float)
        return cls(lengthscales=np.exp(theta[:-2]),
                   sigma_f2=float(np.exp(theta[-2])),
                   sigma_n2=float(np.exp(theta[-1])))


def scaled_distance(xi, xj, hp: Hyperparameters) -> float:
    """Euclidean distance between inputs after dividing each dimension by its lengthscale."""
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or xi.shape[-1] != hp.d:
        raise ConfigError(f"dimension mismatch: {xi.shape} vs {xj.shape} with d={hp.d}")
    diff = (xi - xj) / hp.lengthscales
    return float(np.sqrt(np.sum(diff * diff)))


def scaled_distance_matrix(X1: np.ndarray, X2: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    """All pairwise scaled distances between the rows of X1 and X2."""
    A = np.asarray(X1, dtype=float) / hp.lengthscales
    B = np.asarray(X2, dtype=float) / hp.lengthscales
    sa = np.einsum("id,id->i", A, A)
    sb = np.einsum("id,id->i", B, B)
    r2 = sa[:, None] + sb[None, :] - 2.0 * (A @ B.T)
    np.clip(r2, 0.0, None, out=r2)
    return np.sqrt(r2)


def kernel_eval(spec: KernelSpec, r, sigma_f2: float):
    """Kernel value at scaled distance r; vectorized over arrays of r.

    matern-1.5:  sigma_f2 * (1 + sqrt(3) r) exp(-sqrt(3) r)
    squared-exponential: sigma_f2 * exp(-r^2 / 2)
    compact-rbf (Wendland C2, unit support): sigma_f2 * (1-r)^4 (4r+1) for r < 1, else 0
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("scaled distance must be non-negative")
    if spec.family == MATERN15:
        val = sigma_f2 * (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)
    elif spec.family == SQEXP:
        val = sigma_f2 * np.exp(-0.5 * r * r)
    else:
        one_minus = np.clip(1.0 - r, 0.0, None)
        val = sigma_f2 * one_minus**4 * (4.0 * r + 1.0)
    return val if val.ndim else float(val)


def kernel_radial_weight(spec: KernelSpec, r, sigma_f2: float):
    """Weight c(r) with dK/d(log ell_l) = c(r) * ((x_l - x'_l)/ell_l)^2.

    Used by the analytic likelihood gradients; defined so no division by r
    occurs (each family's form is smooth at r = 0).
    """
    r = np.asarray(r, dtype=float)
    if spec.family == MATERN15:
        val = 3.0 * sigma_f2 * np.exp(-SQRT3 * r)
    elif spec.family == SQEXP:
        val = sigma_f2 * np.exp(-0.5 * r * r)
    else:
        one_minus = np.clip(1.0 - r, 0.0, None)
        val = 20.0 * sigma_f2 * one_minus**3
    return val if val.ndim else float(val)


def cov_matrix(spec: KernelSpec, hp: Hyperparameters, X: np.ndarray,
               add_nugget: bool = True) -> np.ndarray:
    """Symmetric Gram matrix over the rows of X, optionally with the nugget on the diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = scaled_distance_matrix(X, X, hp)
    K = kernel_eval(spec, r, hp.sigma_f2)
    # the distance trick can leave the diagonal a few ulp off exact zero
    np.fill_diagonal(K, hp.sigma_f2)
    if add_nugget:
        K[np.diag_indices_from(K)] += hp.sigma_n2
    return 0.5 * (K + K.T)


def cross_cov(spec: KernelSpec, hp: Hyperparameters, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Cross-covariance between the rows of X1 and X2 (never carries a nugget)."""
    r = scaled_distance_matrix(np.atleast_2d(X1), np.atleast_2d(X2), hp)
    return kernel_eval(spec, r, hp.sigma_f2)


def safe_cholesky(K: np.ndarray, sigma_f2: float, context: str = "") -> np.ndarray:
    """Lower Cholesky factor with the jitter retry policy.

    On failure adds JITTER_START * sigma_f2 to the diagonal and retries up to
    JITTER_RETRIES times, growing the jitter tenfold each time.
    """
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * sigma_f2
    for _ in range(JITTER_RETRIES):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[-1]))
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise NumericalError(f"covariance matrix not positive definite after jitter retries {context}")
