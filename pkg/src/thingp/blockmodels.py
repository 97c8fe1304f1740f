"""Block-wise GP strategies: twin-style global+local blend and laGP-style local prediction.

The twin model blends a sparse global kernel fit on a maximin support set with
a compactly supported local kernel, k_total = (1-lambda) k_g + lambda k_l, and
the thinned variant averages per-block predictions (equal weights). The laGP
strategy matches each test point with a single block and grows a local design
greedily by predictive-variance reduction.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import parallel
from .dataset import Dataset
from .densegp import dense_fit, dense_posterior
from .errors import ConfigError, DataError
from .kernels import (COMPACT, SQEXP, Hyperparameters, KernelSpec, cov_matrix, cross_cov,
                      kernel_eval, safe_cholesky, scaled_distance_matrix)
from .rng import substream
from .thinning import BlockPartition
from .vecchia import PredictionResult

LAMBDA_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.1), 1)


@dataclass
class TwinBlendParams:
    """Blend weight and the three size parameters of the twin strategy."""

    lam: float | None = None  # None: choose on the validation slice
    n_g: int = 100
    k_loc: int = 50
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.n_g < 2:
            raise ConfigError("global support size must be >= 2")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ConfigError("validation fraction must lie in (0, 0.5]")
        if self.k_loc < 1:
            raise ConfigError("local neighborhood size must be >= 1")


def auto_sizes(n: int, d: int, k_loc: int = 50,
               validation_fraction: float = 0.1) -> TwinBlendParams:
    """Default twin sizes from the data dimensions (non-paper defaults, config-overridable)."""
    n_g = min(int(math.ceil(math.sqrt(n) * d)), 1000)
    n_g = max(n_g, 2)
    return TwinBlendParams(lam=None, n_g=n_g, k_loc=k_loc,
                           validation_fraction=validation_fraction)


@dataclass(frozen=True)
class EnsemblePrediction:
    """Per-block predictions and their equal-weight average."""

    block_means: np.ndarray  # (T, n_test)
    block_sds: np.ndarray  # (T, n_test)
    mean: np.ndarray
    sd: np.ndarray

    def to_prediction_result(self) -> PredictionResult:
        return PredictionResult(mean=self.mean, sd=self.sd)


class TwinModel:
    """One block's fitted twin predictor with cached support factorizations."""

    def __init__(self, X, y, support_idx, hp, lam, radius, k_loc):
        self.X = X  # conditioning pool (block rows)
        self.y = y
        self.support_idx = np.asarray(support_idx, dtype=np.int64)
        self.hp = hp
        self.lam = float(lam)
        self.radius = float(radius)
        self.k_loc = int(k_loc)
        self.local_spec = KernelSpec(COMPACT, support_radius=radius)
        self.global_spec = KernelSpec(SQEXP)
        self._prepare()

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def _k_total(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Blended cross-covariance (1-lam) k_g + lam k_l between row sets."""
        kg = cross_cov(self.global_spec, self.hp, A, B)
        r_raw = scaled_distance_matrix(A, B, _iso_hp(self.input_dim)) / self.radius
        kl = kernel_eval(self.local_spec, r_raw, self.hp.sigma_f2)
        return (1.0 - self.lam) * kg + self.lam * kl

    def _prepare(self):
        S = self.support_idx
        Xs = self.X[S]
        C_ss = self._k_total(Xs, Xs)
        C_ss[np.diag_indices_from(C_ss)] = self.hp.sigma_f2 + self.hp.sigma_n2
        self._L_s = safe_cholesky(C_ss, self.hp.sigma_f2, context="(twin support)")
        self._t_s = sla.solve_triangular(self._L_s, self.y[S], lower=True)
        self._V = sla.solve_triangular(self._L_s, self._k_total(Xs, self.X), lower=True)
        self._support_mask = np.zeros(self.X.shape[0], dtype=bool)
        self._support_mask[S] = True
        self._Xiso = self.X  # local neighborhoods use raw (standardized) distance

    def predict(self, X_test: np.ndarray,
                chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean/sd at the test rows given support plus local neighbors."""
        X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
        n_test = X_test.shape[0]
        Xs = self.X[self.support_idx]
        n_nonsupport = int((~self._support_mask).sum())
        k_loc = min(self.k_loc, n_nonsupport)
        prior = self.hp.sigma_f2 + self.hp.sigma_n2
        mean = np.empty(n_test)
        var = np.empty(n_test)
        for lo in range(0, n_test, chunk):
            hi = min(lo + chunk, n_test)
            Xc = X_test[lo:hi]
            U = sla.solve_triangular(self._L_s, self._k_total(Xs, Xc), lower=True)
            d_loc = scaled_distance_matrix(Xc, self._Xiso, _iso_hp(self.input_dim))
            d_loc[:, self._support_mask] = np.inf
            for i in range(hi - lo):
                mu_g = U[:, i] @ self._t_s
                v_g = prior - U[:, i] @ U[:, i]
                if k_loc == 0:
                    mean[lo + i] = mu_g
                    var[lo + i] = max(v_g, self.hp.sigma_n2)
                    continue
                nbr = np.argpartition(d_loc[i], k_loc - 1)[:k_loc]
                C_nn = self._k_total(self.X[nbr], self.X[nbr])
                C_nn[np.diag_indices_from(C_nn)] = prior
                Vn = self._V[:, nbr]
                S_n = C_nn - Vn.T @ Vn
                L_n = safe_cholesky(S_n, self.hp.sigma_f2, context="(twin local)")
                k_n = self._k_total(self.X[nbr], Xc[i][None, :])[:, 0]
                rhs_y = sla.solve_triangular(L_n, self.y[nbr] - Vn.T @ self._t_s, lower=True)
                rhs_k = sla.solve_triangular(L_n, k_n - Vn.T @ U[:, i], lower=True)
                mean[lo + i] = mu_g + rhs_k @ rhs_y
                var[lo + i] = max(v_g - rhs_k @ rhs_k, self.hp.sigma_n2)
        return mean, np.sqrt(var)


def _iso_hp(d: int) -> Hyperparameters:
    return Hyperparameters(np.ones(d), 1.0, 0.0)


def _maximin_subset(X: np.ndarray, n_pick: int, seed: int) -> np.ndarray:
    """First n_pick indices of a greedy maximin ordering under raw distance."""
    from .conditioning import maximin_order

    order = maximin_order(X, _iso_hp(X.shape[1]), seed).order
    return order[:n_pick]


def _coverage_radius(X: np.ndarray, k_loc: int, seed: int, probe_size: int = 512) -> float:
    """Largest k_loc-th-neighbor distance over a probe sample: no gaps in local coverage."""
    n = X.shape[0]
    rng = substream(seed, "twin-radius-probe")
    probe = rng.choice(n, size=min(probe_size, n), replace=False)
    d = scaled_distance_matrix(X[probe], X, _iso_hp(X.shape[1]))
    kth = np.partition(d, k_loc, axis=1)[:, k_loc]  # column k skips self (distance 0)
    return float(kth.max())


def twin_fit(ds_block: Dataset, spec: KernelSpec, params: TwinBlendParams,
             hp_sizes_from_full: bool = True, seed: int = 1) -> TwinModel:
    """Fit one block's twin model.

    Support points are a maximin subset; the global squared-exponential
    hyperparameters come from exact maximum likelihood on the support set; the
    compact kernel's radius guarantees local coverage; lambda minimizes
    held-out squared error over the grid {0, 0.1, ..., 1}.

    When hp_sizes_from_full is unset, the three size parameters are recomputed
    from the block itself.
    """
    if spec.family != SQEXP:
        raise ConfigError("the twin global kernel is squared-exponential")
    if not hp_sizes_from_full:
        params = auto_sizes(ds_block.n, ds_block.d, params.k_loc, params.validation_fraction)
    n = ds_block.n
    minimum = params.n_g + params.k_loc + 1
    if n <= params.n_g + params.k_loc:
        raise DataError(f"block of {n} points too small for twin fit; need more than "
                        f"n_g + k_loc = {params.n_g + params.k_loc} (minimum {minimum})")

    X, y = ds_block.x, ds_block.y
    rng = substream(seed, "twin-validation-split")
    n_val = max(1, int(round(params.validation_fraction * n)))
    val = np.sort(rng.choice(n, size=n_val, replace=False))
    train = np.setdiff1d(np.arange(n), val)
    if train.shape[0] <= params.n_g + params.k_loc:
        raise DataError("block too small to hold out a validation slice over n_g + k_loc")

    support_seed = int(substream(seed, "twin-support").integers(2**31))
    support_local = _maximin_subset(X[train], params.n_g, support_seed)
    hp, _ = dense_fit(X[train][support_local], y[train][support_local], KernelSpec(SQEXP))
    radius = _coverage_radius(X[train], min(params.k_loc, train.shape[0] - 1), seed)

    if params.lam is not None:
        lam = params.lam
    else:
        sse = []
        for lam_c in LAMBDA_GRID:
            cand = TwinModel(X[train], y[train], support_local, hp, lam_c, radius,
                             params.k_loc)
            pred_mean, _ = cand.predict(X[val])
            sse.append(float(np.sum((pred_mean - y[val]) ** 2)))
        lam = float(LAMBDA_GRID[int(np.argmin(sse))])

    # final predictor conditions on the whole block; support indices re-anchored
    support_global = train[support_local]
    return TwinModel(X, y, support_global, hp, lam, radius, params.k_loc)


def fit_twin_ensemble(ds: Dataset, part: BlockPartition, params: TwinBlendParams | None = None,
                      sizes_from_full: bool = True, seed: int = 1) -> list[TwinModel]:
    """One twin model per thinned block, sharing size parameters from the full dataset."""
    if params is None:
        params = auto_sizes(ds.n, ds.d)
    models: list[TwinModel | None] = [None] * part.T

    def fit_one(z: int) -> TwinModel:
        block = part.blocks[z]
        ds_block = Dataset(x=ds.x[block], y=ds.y[block], t=ds.t[block],
                           colnames=ds.colnames)
        child = int(substream(seed, f"twin-block-{z}").integers(2**31))
        return twin_fit(ds_block, KernelSpec(SQEXP), params,
                        hp_sizes_from_full=sizes_from_full, seed=child)

    workers = parallel.get_max_workers()
    if workers > 1 and part.T > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            models = list(ex.map(fit_one, range(part.T)))
    else:
        models = [fit_one(z) for z in range(part.T)]
    return models


def ensemble_predict(models: list, X_test: np.ndarray) -> EnsemblePrediction:
    """Equal-weight model averaging with dispersion-inflated standard deviation.

    mean = (1/T) sum_z f_z ; sd^2 = (1/T) sum_z s_z^2 + (1/T) sum_z (f_z - mean)^2.
    """
    if len(models) < 1:
        raise ConfigError("ensemble needs at least one block model")
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    means, sds = [], []
    for mdl in models:
        mu, sd = mdl.predict(X_test)
        means.append(mu)
        sds.append(sd)
    block_means = np.vstack(means)
    block_sds = np.vstack(sds)
    mean = block_means.mean(axis=0)
    sd = np.sqrt((block_sds**2).mean(axis=0) + ((block_means - mean) ** 2).mean(axis=0))
    return EnsemblePrediction(block_means=block_means, block_sds=block_sds, mean=mean, sd=sd)


def _lagp_local_predict(X: np.ndarray, y: np.ndarray, x_star: np.ndarray,
                        n_start: int, n_end: int) -> tuple[float, float]:
    """Greedy local GP at x_star over candidate rows X: grow the design from the
    n_start nearest points by predictive-variance reduction, refit, predict."""
    n = X.shape[0]
    if n_end > n:
        warnings.warn(f"local design size {n_end} exceeds the {n} available points; shrunk")
        n_end = n
    n_start = min(n_start, n_end)

    iso = _iso_hp(X.shape[1])
    d_star = scaled_distance_matrix(x_star[None, :], X, iso)[0]
    start = np.argsort(d_star, kind="stable")[:n_start]

    # robust pilot hyperparameters for the greedy metric
    ell0 = float(np.median(d_star[d_star > 0])) if np.any(d_star > 0) else 1.0
    var_y = max(float(y.var(ddof=1)), 1e-8) if n > 1 else 1.0
    hp0 = Hyperparameters(np.full(X.shape[1], max(ell0, 1e-6)), var_y, 0.01 * var_y)
    spec = KernelSpec(SQEXP)

    active = list(start)
    in_active = np.zeros(n, dtype=bool)
    in_active[start] = True
    cand = np.flatnonzero(~in_active)

    K_aa = cov_matrix(spec, hp0, X[active], add_nugget=True)
    L = safe_cholesky(K_aa, hp0.sigma_f2, context="(laGP start)")
    W = sla.solve_triangular(L, cross_cov(spec, hp0, X[active], X[cand]), lower=True)
    w_star = sla.solve_triangular(L, cross_cov(spec, hp0, X[active], x_star[None, :])[:, 0],
                                  lower=True)
    k_star_cand = cross_cov(spec, hp0, X[cand], x_star[None, :])[:, 0]
    prior = hp0.sigma_f2 + hp0.sigma_n2

    while len(active) < n_end and cand.shape[0] > 0:
        denom = prior - np.einsum("ij,ij->j", W, W)
        numer = k_star_cand - W.T @ w_star
        safe = denom > 1e-12 * hp0.sigma_f2
        score = np.where(safe, numer**2 / np.where(safe, denom, 1.0), -np.inf)
        best = int(np.argmax(score))
        c = int(cand[best])

        l_new = W[:, best]
        l_diag = math.sqrt(max(prior - l_new @ l_new, 1e-12 * hp0.sigma_f2))
        keep = np.ones(cand.shape[0], dtype=bool)
        keep[best] = False
        k_row = cross_cov(spec, hp0, X[c][None, :], X[cand[keep]])[0]
        W_next = np.vstack([W[:, keep], (k_row - l_new @ W[:, keep]) / l_diag])
        w_star = np.append(w_star, (float(cross_cov(spec, hp0, X[c][None, :],
                                                    x_star[None, :])[0, 0])
                                    - l_new @ w_star) / l_diag)
        L = np.block([[L, np.zeros((L.shape[0], 1))], [l_new[None, :], np.array([[l_diag]])]])
        W = W_next
        cand = cand[keep]
        k_star_cand = k_star_cand[keep]
        active.append(c)

    hp_fit, _ = dense_fit(X[active], y[active], spec, init=hp0, isotropic=True, maxiter=60)
    mean, var = dense_posterior(X[active], y[active], x_star[None, :], spec, hp_fit,
                                include_nugget=True)
    return float(mean[0]), float(np.sqrt(var[0]))


def lagp_single_block_predict(part: BlockPartition, ds: Dataset, x_star: np.ndarray,
                              spec: KernelSpec, n_start: int = 6,
                              n_end: int = 30) -> tuple[float, float]:
    """laGP on the single thinned block containing the training point nearest x_star."""
    if spec.family != SQEXP:
        raise ConfigError("laGP uses the squared-exponential kernel")
    if n_start > n_end:
        raise ConfigError("n_start must not exceed n_end")
    x_star = np.asarray(x_star, dtype=float).ravel()
    d_star = scaled_distance_matrix(x_star[None, :], ds.x, _iso_hp(ds.d))[0]
    nearest = int(np.argmin(d_star))
    block = part.blocks[int(part.block_of()[nearest])]
    return _lagp_local_predict(ds.x[block], ds.y[block], x_star, n_start, n_end)


def lagp_unthinned_predict(ds: Dataset, x_star: np.ndarray, spec: KernelSpec,
                           n_start: int = 6, n_end: int = 30) -> tuple[float, float]:
    """laGP over the whole dataset as a single block."""
    if spec.family != SQEXP:
        raise ConfigError("laGP uses the squared-exponential kernel")
    if n_start > n_end:
        raise ConfigError("n_start must not exceed n_end")
    x_star = np.asarray(x_star, dtype=float).ravel()
    return _lagp_local_predict(ds.x, ds.y, x_star, n_start, n_end)
