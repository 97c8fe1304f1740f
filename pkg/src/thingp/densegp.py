"""Exact dense-GP likelihood, ML fitting, and posterior for small point sets.

Used wherever a subproblem is small enough that no approximation is needed:
twin support sets, laGP local sets, temporal residual windows.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .gpmath import batch_terms
from .kernels import Hyperparameters, KernelSpec, cov_matrix, cross_cov, safe_cholesky

DEFAULT_LOG_BOUNDS = {"lengthscale": (-6.0, 12.0), "sigma_f2": (-12.0, 12.0),
                      "sigma_n2": (-16.0, 6.0)}


@dataclass
class DenseFitInfo:
    loglik: float
    iterations: int
    converged: bool


def dense_loglik(X: np.ndarray, y: np.ndarray, spec: KernelSpec, hp: Hyperparameters) -> float:
    """Joint Gaussian log density of y under the kernel with nugget."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ll, _ = batch_terms(spec, hp, X[None], np.asarray(y, dtype=float)[None],
                        conditional=False, want_grad=False)
    return ll


def dense_loglik_grad(X: np.ndarray, y: np.ndarray, spec: KernelSpec,
                      hp: Hyperparameters) -> tuple[float, np.ndarray]:
    """Log likelihood and its gradient with respect to the log hyperparameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return batch_terms(spec, hp, X[None], np.asarray(y, dtype=float)[None],
                       conditional=False, want_grad=True)


def dense_fit(X: np.ndarray, y: np.ndarray, spec: KernelSpec,
              init: Hyperparameters | None = None, isotropic: bool = False,
              maxiter: int = 100) -> tuple[Hyperparameters, DenseFitInfo]:
    """Maximum-likelihood hyperparameters by L-BFGS-B on the log parameters.

    isotropic=True ties all lengthscales to a single value (laGP-style local
    fits).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    d = X.shape[1]
    if init is None:
        var_y = float(y.var(ddof=1)) if y.shape[0] > 1 else 1.0
        var_y = max(var_y, 1e-8)
        init = Hyperparameters(np.ones(d), var_y, 0.1 * var_y)

    lo, hi = DEFAULT_LOG_BOUNDS["lengthscale"]
    bounds = ([(lo, hi)] if isotropic else [(lo, hi)] * d)
    bounds += [DEFAULT_LOG_BOUNDS["sigma_f2"], DEFAULT_LOG_BOUNDS["sigma_n2"]]

    def unpack(theta):
        if isotropic:
            ells = np.full(d, np.exp(theta[0]))
            return Hyperparameters(ells, float(np.exp(theta[1])), float(np.exp(theta[2])))
        return Hyperparameters.from_log_vector(theta)

    def objective(theta):
        hp = unpack(theta)
        ll, grad = batch_terms(spec, hp, X[None], y[None], conditional=False, want_grad=True)
        if isotropic:
            grad = np.array([grad[:-2].sum(), grad[-2], grad[-1]])
        return -ll, -grad

    if isotropic:
        theta0 = np.array([np.log(init.lengthscales[0]), np.log(init.sigma_f2),
                           np.log(max(init.sigma_n2, 1e-12))])
    else:
        theta0 = init.to_log_vector()
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter})
    hp = unpack(res.x)
    return hp, DenseFitInfo(loglik=-float(res.fun), iterations=int(res.nit),
                            converged=bool(res.success))


def dense_posterior(X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray,
                    spec: KernelSpec, hp: Hyperparameters,
                    include_nugget: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at the test rows given noisy observations.

    include_nugget=True returns the predictive variance of a new observation
    (latent variance plus nugget); False returns the latent variance.
    """
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    y_train = np.asarray(y_train, dtype=float)
    K = cov_matrix(spec, hp, X_train, add_nugget=True)
    L = safe_cholesky(K, hp.sigma_f2, context="(dense posterior)")
    kx = cross_cov(spec, hp, X_train, X_test)
    w = sla.solve_triangular(L, kx, lower=True)
    a = sla.solve_triangular(L, y_train, lower=True)
    mean = w.T @ a
    prior = hp.sigma_f2 + (hp.sigma_n2 if include_nugget else 0.0)
    var = prior - np.einsum("ij,ij->j", w, w)
    floor = hp.sigma_n2 if include_nugget else 0.0
    return mean, np.maximum(var, floor)
