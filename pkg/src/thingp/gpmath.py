"""Batched Gaussian likelihood terms and analytic gradients.

Everything here operates on stacks of small coordinate sets (B, k, d): the
Vecchia likelihood feeds stacks of conditioning sets (point of interest last),
dense fits feed a single set. Gradients are with respect to the log
hyperparameters [log ell_1..d, log sigma_f2, log sigma_n2] and use the
block-inverse identity to get the conditional score from one inverse per set.
"""

import numpy as np

from .errors import NumericalError
from .kernels import (JITTER_GROWTH, JITTER_RETRIES, JITTER_START, Hyperparameters,
                      KernelSpec, kernel_eval, kernel_radial_weight)

_CHUNK_ELEMS = 20_000_000
_LOG_2PI = np.log(2.0 * np.pi)


def _gram_batch(spec: KernelSpec, hp: Hyperparameters, Xs: np.ndarray):
    """Scaled-distance matrices and Gram matrices for a (B, k, d) stack of scaled coords."""
    sq = np.einsum("bkd,bkd->bk", Xs, Xs)
    r2 = sq[:, :, None] + sq[:, None, :] - 2.0 * (Xs @ Xs.transpose(0, 2, 1))
    np.clip(r2, 0.0, None, out=r2)
    r = np.sqrt(r2)
    K = kernel_eval(spec, r, hp.sigma_f2)
    k = Xs.shape[1]
    K[:, np.arange(k), np.arange(k)] = hp.sigma_f2 + hp.sigma_n2
    return r, K


def _chol_with_jitter(K: np.ndarray, sigma_f2: float, labels=None):
    """Batched Cholesky with the shared jitter retry policy.

    Returns (L, jitter actually added). Raises NumericalError naming the first
    offending set when the retries run out.
    """
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * sigma_f2
    k = K.shape[-1]
    eye = np.eye(k)
    for _ in range(JITTER_RETRIES):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    bad = "unknown"
    for b in range(K.shape[0]):
        try:
            np.linalg.cholesky(K[b])
        except np.linalg.LinAlgError:
            bad = str(labels[b]) if labels is not None else str(b)
            break
    raise NumericalError(f"covariance not positive definite after jitter retries (point {bad})")


def batch_terms(spec: KernelSpec, hp: Hyperparameters, X: np.ndarray, y: np.ndarray,
                conditional: bool, want_grad: bool, labels=None):
    """Log-likelihood contributions of a (B, k, d) stack of sets, chunked.

    conditional=True: each set contributes log N(y_last | y_rest), the Vecchia
    term for the last point given the rest. conditional=False: each set
    contributes its joint Gaussian log density.

    Returns (total loglik, gradient wrt log hyperparameters or None).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    B, k, d = X.shape
    total = 0.0
    grad = np.zeros(d + 2) if want_grad else None
    chunk = max(1, _CHUNK_ELEMS // (k * k))
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        lab = labels[lo:hi] if labels is not None else None
        ll, g = _terms_chunk(spec, hp, X[lo:hi], y[lo:hi], conditional, want_grad, lab)
        total += ll
        if want_grad:
            grad += g
    return total, grad


def _terms_chunk(spec, hp, X, y, conditional, want_grad, labels):
    k = X.shape[1]
    Xs = X / hp.lengthscales
    r, K = _gram_batch(spec, hp, Xs)
    L, jitter = _chol_with_jitter(K, hp.sigma_f2, labels)
    if jitter:
        K[:, np.arange(k), np.arange(k)] += jitter
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if not want_grad:
        u = np.linalg.solve(L, y[..., None])[..., 0]
        if conditional:
            ll = float(np.sum(-0.5 * _LOG_2PI - np.log(diag[:, -1]) - 0.5 * u[:, -1] ** 2))
        else:
            ll = float(np.sum(-0.5 * k * _LOG_2PI - np.log(diag).sum(axis=1)
                              - 0.5 * (u * u).sum(axis=1)))
        return ll, None

    Kinv = np.linalg.inv(K)
    alpha = np.einsum("bij,bj->bi", Kinv, y)
    if conditional:
        # r^2/v = alpha_last^2 / gamma with gamma the last precision entry
        quad_last = alpha[:, -1] ** 2 / Kinv[:, -1, -1]
        ll = float(np.sum(-0.5 * _LOG_2PI - np.log(diag[:, -1]) - 0.5 * quad_last))
    else:
        ll = float(np.sum(-0.5 * k * _LOG_2PI - np.log(diag).sum(axis=1)
                          - 0.5 * np.einsum("bi,bi->b", y, alpha)))
    M = alpha[:, :, None] * alpha[:, None, :] - Kinv
    if conditional and k > 1:
        gamma = Kinv[:, -1, -1]
        gvec = Kinv[:, :-1, -1]
        alpha_c = alpha[:, :-1] - gvec * (alpha[:, -1] / gamma)[:, None]
        kc_inv = Kinv[:, :-1, :-1] - gvec[:, :, None] * gvec[:, None, :] / gamma[:, None, None]
        M[:, :-1, :-1] -= alpha_c[:, :, None] * alpha_c[:, None, :] - kc_inv
    tr_m = float(np.einsum("bii->", M))
    mk = float(np.einsum("bij,bij->", M, K))

    weight = kernel_radial_weight(spec, r, hp.sigma_f2)
    P = M * weight
    Pa = P @ Xs
    cross = np.einsum("bkd,bkd->d", Xs, Pa)
    xs2 = Xs * Xs
    row = np.einsum("bk,bkd->d", P.sum(axis=2), xs2)
    col = np.einsum("bk,bkd->d", P.sum(axis=1), xs2)

    grad = np.empty(Xs.shape[2] + 2)
    grad[:-2] = 0.5 * (row + col - 2.0 * cross)
    # diagonal carries sigma_f2 + sigma_n2 (+ jitter); kernel part is K minus those extras
    grad[-2] = 0.5 * (mk - (hp.sigma_n2 + jitter) * tr_m)
    grad[-1] = 0.5 * hp.sigma_n2 * tr_m
    return ll, grad
