"""Temporal residual component: fit g(t) on residuals, predict with a hard window.

g is a zero-mean Matern-1.5 GP over the scalar time index, fit on residuals
y - f_hat(x) and predicted from the temporal neighborhood [t - T, t + T] only.
Points with an empty window revert to the prior; the tempGP pipeline treats
them as contributing nothing at all (see `predict_g_series`).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .densegp import dense_posterior
from .errors import ConfigError, DataError
from .gpmath import batch_terms
from .kernels import MATERN15, Hyperparameters, KernelSpec
from .vecchia import PredictionResult

_N_FIT_WINDOWS = 32
_DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class ResidualSeries:
    """Residuals y - f_hat(x) indexed by strictly increasing time."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        r = np.asarray(self.r, dtype=float).ravel()
        if t.shape != r.shape:
            raise DataError("residual series needs matching t and r lengths")
        if np.any(np.diff(t) <= 0):
            raise DataError("residual time index must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.t.shape[0]


@dataclass
class TemporalModel:
    """Matern-1.5 hyperparameters over time plus the window half-width."""

    hp: Hyperparameters
    T: int
    degenerate: bool = False
    spec: KernelSpec = None

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("temporal window half-width must be >= 1")
        if self.spec is None:
            self.spec = KernelSpec(MATERN15)


def _window(res: ResidualSeries, t_center: float, T: int) -> slice:
    lo = np.searchsorted(res.t, t_center - T, side="left")
    hi = np.searchsorted(res.t, t_center + T, side="right")
    return slice(lo, hi)


def fit_g(res: ResidualSeries, T: int) -> TemporalModel:
    """Exact ML over a subsample of sliding windows of width 2T+1.

    Windows are small (T is in the tens), so each window's likelihood is a
    cheap dense-GP evaluation; the objective sums them under one shared
    hyperparameter vector.
    """
    if res.n < 10:
        raise DataError("need at least 10 residuals to fit the temporal component")
    if T < 1:
        raise ConfigError("temporal window half-width must be >= 1")
    var_r = float(res.r.var(ddof=1))
    if var_r < _DEGENERATE_VAR:
        return TemporalModel(hp=Hyperparameters(np.array([float(T)]), 1.0, 1.0),
                             T=T, degenerate=True)

    centers = np.linspace(res.t[0] + T, res.t[-1] - T, num=_N_FIT_WINDOWS)
    if res.t[-1] - res.t[0] <= 2 * T:
        centers = np.array([0.5 * (res.t[0] + res.t[-1])])
    windows = []
    for c in centers:
        sl = _window(res, c, T)
        if sl.stop - sl.start >= 3:
            windows.append(sl)
    if not windows:
        windows = [slice(0, res.n)]

    spec = KernelSpec(MATERN15)

    def objective(theta):
        hp = Hyperparameters.from_log_vector(theta)
        ll, grad = 0.0, np.zeros(3)
        for sl in windows:
            t_w = res.t[sl, None]
            r_w = res.r[sl]
            ll_w, g_w = batch_terms(spec, hp, t_w[None], r_w[None],
                                    conditional=False, want_grad=True)
            ll += ll_w
            grad += g_w
        return -ll, -grad

    theta0 = np.log([max(T / 3.0, 1.0), 0.5 * var_r, 0.5 * var_r])
    bounds = [(-3.0, np.log(50.0 * T)), (-16.0, 8.0), (-16.0, 8.0)]
    result = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"maxiter": 80})
    return TemporalModel(hp=Hyperparameters.from_log_vector(result.x), T=T)


def predict_g(model: TemporalModel, res: ResidualSeries, t_star: float) -> tuple[float, float]:
    """Latent posterior of g at t_star from the residuals inside [t_star-T, t_star+T].

    An empty window reverts to the prior: mean exactly 0, sd = sqrt(sigma_f2).
    A degenerate model returns g identically 0.
    """
    if model.degenerate:
        return 0.0, 0.0
    sl = _window(res, float(t_star), model.T)
    if sl.stop == sl.start:
        return 0.0, float(np.sqrt(model.hp.sigma_f2))
    mean, var = dense_posterior(res.t[sl, None], res.r[sl], np.array([[float(t_star)]]),
                                model.spec, model.hp, include_nugget=False)
    return float(mean[0]), float(np.sqrt(var[0]))


def predict_g_series(model: TemporalModel, res: ResidualSeries,
                     t_stars: np.ndarray) -> PredictionResult:
    """Pipeline form of predict_g over many time points.

    Points whose window is empty contribute exactly (0 mean, 0 sd), so
    combining with f leaves those predictions bit-identical to f alone —
    matching the convention that no temporal variance is added where g is
    effectively zero.
    """
    t_stars = np.asarray(t_stars, dtype=float).ravel()
    mean = np.zeros(t_stars.shape[0])
    sd = np.zeros(t_stars.shape[0])
    if model.degenerate:
        return PredictionResult(mean=mean, sd=sd)
    for i, t_star in enumerate(t_stars):
        sl = _window(res, float(t_star), model.T)
        if sl.stop == sl.start:
            continue
        m, v = dense_posterior(res.t[sl, None], res.r[sl], np.array([[float(t_star)]]),
                               model.spec, model.hp, include_nugget=False)
        mean[i] = m[0]
        sd[i] = np.sqrt(v[0])
    return PredictionResult(mean=mean, sd=sd)


def combine(f_pred: PredictionResult, g_pred: PredictionResult) -> PredictionResult:
    """Sum of the spatial and temporal predictions: means add, variances add.

    Where the g variance is exactly zero the f standard deviation passes
    through bit-identically (no sqrt round trip).
    """
    if f_pred.mean.shape != g_pred.mean.shape:
        raise ConfigError("f and g predictions must have equal lengths")
    g_var = g_pred.sd**2
    sd = np.where(g_var == 0.0, f_pred.sd, np.sqrt(f_pred.sd**2 + g_var))
    return PredictionResult(mean=f_pred.mean + g_pred.mean, sd=sd)
