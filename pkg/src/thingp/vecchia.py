"""Thinned scaled-Vecchia model: likelihood, hyperparameter fit, sequential prediction.

The likelihood is a sum over blocks of per-point conditional Gaussian terms;
blocks share one hyperparameter vector. Fitting ascends the log-parameters
with analytic gradients, rebuilding the conditioning plans with the updated
lengthscales a configurable number of times. Prediction runs on the unthinned
data with an augmented candidate pool.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .conditioning import ConditioningPlan, block_orders, prediction_plan, training_plan
from .dataset import Dataset
from .errors import ConfigError, DataError
from .gpmath import batch_terms
from .kernels import Hyperparameters, KernelSpec, cov_matrix, cross_cov, safe_cholesky
from .rng import substream
from .thinning import BlockPartition

LOG_BOUNDS_LENGTHSCALE = (-6.0, 12.0)
LOG_BOUNDS_SIGMA_F2 = (-12.0, 12.0)
LOG_BOUNDS_SIGMA_N2 = (-16.0, 6.0)


@dataclass(frozen=True)
class PredictionResult:
    """Predictive mean and standard deviation per test point."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "sd", np.asarray(self.sd, dtype=float))

    @property
    def variance(self) -> np.ndarray:
        return self.sd**2


@dataclass
class FitConfig:
    """Knobs for the Vecchia fit; defaults follow the package-wide conventions."""

    include_time: bool = False
    seed: int = 1
    plan_rebuilds: int = 2
    inner_maxiter: int = 15
    maxiter: int = 100
    rel_tol: float = 1e-6
    init_nugget_frac: float = 0.1
    # warm-up phases may ascend a subsampled sum of conditional terms; the
    # final phase always optimizes the full objective
    warmup_subsample: int = 10000


@dataclass
class FitReport:
    final_loglik: float
    iterations: int
    trace: list = field(default_factory=list)  # (phase, loglik, theta) per accepted iterate
    converged: bool = False


@dataclass
class VecchiaModel:
    """Fitted state: hyperparameters plus everything needed to rebuild inputs."""

    hp: Hyperparameters
    spec: KernelSpec
    plan: ConditioningPlan
    partition: BlockPartition
    m: int
    seed: int
    include_time: bool = False
    time_mean: float = 0.0
    time_scale: float = 1.0

    @property
    def input_dim(self) -> int:
        return self.hp.d


def model_inputs(ds: Dataset, include_time: bool, time_mean: float,
                 time_scale: float) -> np.ndarray:
    """Covariate matrix used by the model: x, plus a standardized time column if asked."""
    if not include_time:
        return ds.x
    t_col = (ds.t - time_mean) / time_scale
    return np.column_stack([ds.x, t_col])


def _grouped_sets(plan: ConditioningPlan, X: np.ndarray, y: np.ndarray):
    """Stack conditioning sets by size: (Xa (B, s+1, d), ya (B, s+1), labels)."""
    if plan.mode != "training":
        raise ConfigError("likelihood needs a training-mode conditioning plan")
    n = X.shape[0]
    if plan.point_order.shape[0] != n or np.any(np.sort(plan.point_order) != np.arange(n)):
        raise ConfigError("conditioning plan must cover every training index exactly once")
    groups = []
    for s in np.unique(plan.sizes):
        rows = np.flatnonzero(plan.sizes == s)
        pts = plan.point_order[rows]
        if s == 0:
            idx = pts[:, None]
        else:
            idx = np.concatenate([plan.neighbors[rows, :s], pts[:, None]], axis=1)
        groups.append((X[idx], y[idx], pts))
    return groups


def _loglik_from_groups(groups, spec, hp, want_grad):
    total = 0.0
    grad = np.zeros(hp.d + 2) if want_grad else None
    for Xa, ya, labels in groups:
        ll, g = batch_terms(spec, hp, Xa, ya, conditional=True, want_grad=want_grad,
                            labels=labels)
        total += ll
        if want_grad:
            grad += g
    return total, grad


def vecchia_loglik(ds: Dataset, plan: ConditioningPlan, spec: KernelSpec,
                   hp: Hyperparameters) -> float:
    """Sum over points of log N(y_j | y_{C_j}) under the kernel (zero prior mean)."""
    if hp.d != ds.d:
        raise ConfigError(f"hyperparameters have {hp.d} lengthscales for {ds.d} input columns")
    total, _ = _loglik_from_groups(_grouped_sets(plan, ds.x, ds.y), spec, hp, False)
    return total


def loglik_gradient(ds: Dataset, plan: ConditioningPlan, spec: KernelSpec,
                    hp: Hyperparameters) -> np.ndarray:
    """Analytic gradient of `vecchia_loglik` with respect to the log hyperparameters."""
    if hp.d != ds.d:
        raise ConfigError(f"hyperparameters have {hp.d} lengthscales for {ds.d} input columns")
    _, grad = _loglik_from_groups(_grouped_sets(plan, ds.x, ds.y), spec, hp, True)
    return grad


def fit(ds: Dataset, part: BlockPartition, spec: KernelSpec, m: int,
        config: FitConfig | None = None) -> tuple[VecchiaModel, FitReport]:
    """Maximize the blocked Vecchia likelihood over the log hyperparameters.

    Runs `plan_rebuilds` short ascent phases, rebuilding the maximin orders and
    conditioning plans with the updated lengthscales after each, then a final
    fixed-plan optimization to convergence.
    """
    config = config or FitConfig()
    if part.min_block_size() < m + 1:
        raise ConfigError(f"smallest block has {part.min_block_size()} points; "
                          f"need at least m+1={m + 1} (lower T or m)")

    t_mean, t_scale = 0.0, 1.0
    if config.include_time:
        t_mean = float(ds.t.mean())
        t_scale = float(ds.t.std(ddof=1)) or 1.0
    X = model_inputs(ds, config.include_time, t_mean, t_scale)
    y = ds.y
    d = X.shape[1]

    var_y = max(float(y.var(ddof=1)), 1e-10)
    hp = Hyperparameters(np.ones(d), var_y, config.init_nugget_frac * var_y)
    bounds = [LOG_BOUNDS_LENGTHSCALE] * d + [LOG_BOUNDS_SIGMA_F2, LOG_BOUNDS_SIGMA_N2]

    report = FitReport(final_loglik=-np.inf, iterations=0)
    plan = None
    for phase in range(config.plan_rebuilds + 1):
        final_phase = phase == config.plan_rebuilds
        orders = block_orders(X, part, hp, config.seed)
        plan = training_plan(part, orders, X, hp, m)
        groups = _grouped_sets(plan, X, y)
        if not final_phase and 0 < config.warmup_subsample < ds.n:
            frac = config.warmup_subsample / ds.n
            rng = substream(config.seed, f"warmup-subsample-{phase}")
            slim = []
            for Xa, ya, labels in groups:
                take = max(1, int(round(frac * Xa.shape[0])))
                rows = rng.choice(Xa.shape[0], size=take, replace=False)
                slim.append((Xa[rows], ya[rows], labels[rows]))
            groups = slim
        last = {"theta": None, "f": None}

        def objective(theta):
            hp_t = Hyperparameters.from_log_vector(theta)
            ll, grad = _loglik_from_groups(groups, spec, hp_t, True)
            if not np.isfinite(ll):
                raise DataError("Vecchia fit diverged to a non-finite objective")
            last["theta"], last["f"] = theta.copy(), ll
            return -ll, -grad

        def callback(theta):
            report.trace.append((phase, last["f"], theta.copy()))

        maxiter = config.maxiter if final_phase else config.inner_maxiter
        res = minimize(objective, hp.to_log_vector(), jac=True, method="L-BFGS-B",
                       bounds=bounds, callback=callback,
                       options={"maxiter": maxiter, "ftol": config.rel_tol})
        hp = Hyperparameters.from_log_vector(res.x)
        report.iterations += int(res.nit)
        report.final_loglik = -float(res.fun)
        if final_phase:
            report.converged = bool(res.success)

    model = VecchiaModel(hp=hp, spec=spec, plan=plan, partition=part, m=m,
                         seed=config.seed, include_time=config.include_time,
                         time_mean=t_mean, time_scale=t_scale)
    return model, report


def predict(model: VecchiaModel, ds_train: Dataset, X_test: np.ndarray, m_p: int,
            seed: int | None = None) -> PredictionResult:
    """Sequential conditional-Gaussian prediction over the maximin-ordered test set.

    Earlier test predictions join the candidate pool as pseudo-observations
    (plug-in means, no variance inflation). The reported variance includes the
    nugget. When the model carries a time input, the last column of X_test must
    be the raw time index.
    """
    seed = model.seed if seed is None else seed
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    if X_test.shape[1] != model.input_dim:
        raise ConfigError(f"test rows have {X_test.shape[1]} columns; model expects "
                          f"{model.input_dim}")
    X_train = model_inputs(ds_train, model.include_time, model.time_mean, model.time_scale)
    if model.include_time:
        X_test = X_test.copy()
        X_test[:, -1] = (X_test[:, -1] - model.time_mean) / model.time_scale

    hp, spec = model.hp, model.spec
    plan = prediction_plan(X_train, X_test, hp, m_p, seed)
    n_train, n_test = X_train.shape[0], X_test.shape[0]

    pool_x = np.vstack([X_train[plan.train_order], X_test[plan.test_order]])
    pool_y = np.concatenate([ds_train.y[plan.train_order], np.zeros(n_test)])
    mean_ord = np.empty(n_test)
    var_ord = np.empty(n_test)
    prior_var = hp.sigma_f2 + hp.sigma_n2
    for k in range(n_test):
        idx = plan.neighbors[k, : plan.sizes[k]]
        Xc = pool_x[idx]
        K = cov_matrix(spec, hp, Xc, add_nugget=True)
        L = safe_cholesky(K, hp.sigma_f2, context=f"(prediction {k})")
        kx = cross_cov(spec, hp, Xc, pool_x[n_train + k][None, :])[:, 0]
        w = sla.solve_triangular(L, kx, lower=True)
        a = sla.solve_triangular(L, pool_y[idx], lower=True)
        mean_ord[k] = w @ a
        var_ord[k] = max(prior_var - w @ w, hp.sigma_n2)
        pool_y[n_train + k] = mean_ord[k]

    mean = np.empty(n_test)
    sd = np.empty(n_test)
    mean[plan.test_order] = mean_ord
    sd[plan.test_order] = np.sqrt(var_ord)
    return PredictionResult(mean=mean, sd=sd)


def training_residuals(model: VecchiaModel, ds_train: Dataset, m_p: int) -> np.ndarray:
    """In-sample residuals y_i - f_hat(x_i) with the point excluded from its own
    conditioning set (otherwise the temporal signal would be absorbed into f_hat)."""
    X = model_inputs(ds_train, model.include_time, model.time_mean, model.time_scale)
    hp, spec = model.hp, model.spec
    Xl = X / hp.lengthscales
    sq = np.einsum("id,id->i", Xl, Xl)
    n = X.shape[0]
    k = min(m_p, n - 1)
    resid = np.empty(n)
    chunk = max(1, 2_000_000 // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (Xl[lo:hi] @ Xl.T)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        for i in range(hi - lo):
            nbr = np.argpartition(d2[i], k - 1)[:k]
            Xc = X[nbr]
            K = cov_matrix(spec, hp, Xc, add_nugget=True)
            L = safe_cholesky(K, hp.sigma_f2, context=f"(residual {lo + i})")
            kx = cross_cov(spec, hp, Xc, X[lo + i][None, :])[:, 0]
            w = sla.solve_triangular(L, kx, lower=True)
            a = sla.solve_triangular(L, ds_train.y[nbr], lower=True)
            resid[lo + i] = ds_train.y[lo + i] - w @ a
    return resid
