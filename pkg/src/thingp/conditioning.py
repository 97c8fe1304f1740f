"""Maximin ordering and nearest-neighbor conditioning sets.

Training plans are built per block and never cross block boundaries: that is
the mechanism that keeps conditioning sets free of temporally adjacent points.
Prediction plans run on the unthinned data and grow an augmented candidate
pool as test points are predicted.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .kernels import Hyperparameters
from .rng import substream
from .thinning import BlockPartition

_ROW_CHUNK = 512


@dataclass(frozen=True)
class MaximinOrder:
    """A permutation of the input index set; first pick drawn by the seeded generator."""

    order: np.ndarray
    seed: int

    def __post_init__(self):
        self.order.flags.writeable = False


@dataclass(frozen=True)
class ConditioningPlan:
    """Per-point ordered conditioning sets.

    mode "training": `point_order` lists all record indices block by block in
    maximin order; row j of `neighbors` holds the conditioning set of
    point_order[j] as record indices, -1 padded, nearest first.

    mode "prediction": conditioning sets index an augmented pool laid out as
    [training rows in `train_order`, then test rows in `test_order`]; row k
    belongs to the k-th test point in `test_order`.
    """

    mode: str
    neighbors: np.ndarray
    sizes: np.ndarray
    point_order: np.ndarray | None = None
    block_of: np.ndarray | None = None
    train_order: np.ndarray | None = None
    test_order: np.ndarray | None = None

    def __post_init__(self):
        for arr in (self.neighbors, self.sizes, self.point_order, self.block_of,
                    self.train_order, self.test_order):
            if arr is not None:
                arr.flags.writeable = False

    def dump(self) -> str:
        """Diagnostic text: one line per point (index, block, conditioning indices)."""
        lines = []
        if self.mode == "training":
            for j, pt in enumerate(self.point_order):
                nbrs = self.neighbors[j, : self.sizes[j]]
                lines.append(f"{pt}\t{self.block_of[pt]}\t{' '.join(map(str, nbrs))}")
        else:
            for k in range(self.neighbors.shape[0]):
                nbrs = self.neighbors[k, : self.sizes[k]]
                lines.append(f"test:{self.test_order[k]}\t-\t{' '.join(map(str, nbrs))}")
        return "\n".join(lines) + "\n"


def maximin_order(X: np.ndarray, hp: Hyperparameters, seed: int) -> MaximinOrder:
    """Exact greedy maximin ordering under the scaled distance.

    The first point is drawn uniformly from the seeded generator; every later
    position maximizes the minimum scaled distance to the points already
    ordered, ties broken by the smallest index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = X.shape[0]
    rng = substream(seed, "maximin-first-pick")
    first = int(rng.integers(k))
    if k == 1:
        return MaximinOrder(order=np.array([0], dtype=np.int64), seed=seed)

    Xs = X / hp.lengthscales
    order = np.empty(k, dtype=np.int64)
    order[0] = first
    diff = Xs - Xs[first]
    d2 = np.einsum("id,id->i", diff, diff)
    d2[first] = -np.inf
    for pos in range(1, k):
        nxt = int(np.argmax(d2))
        order[pos] = nxt
        diff = Xs - Xs[nxt]
        cand = np.einsum("id,id->i", diff, diff)
        np.minimum(d2, cand, out=d2)
        d2[nxt] = -np.inf
    return MaximinOrder(order=order, seed=seed)


def block_orders(ds_x: np.ndarray, part: BlockPartition, hp: Hyperparameters,
                 seed: int) -> list[MaximinOrder]:
    """Per-block maximin orders (in record indices) with block-derived seeds."""
    orders = []
    for z, block in enumerate(part.blocks):
        child = int(substream(seed, f"block-{z}").integers(2**31))
        local = maximin_order(ds_x[block], hp, child)
        orders.append(MaximinOrder(order=block[local.order], seed=child))
    return orders


def _nearest_predecessors(Xs: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """For each row j of maximin-ordered Xs: min(j, m) nearest earlier rows.

    Returns (neighbors (k, m) of ordered positions, -1 padded, nearest first;
    sizes (k,)).
    """
    k = Xs.shape[0]
    sq = np.einsum("id,id->i", Xs, Xs)
    neighbors = np.full((k, m), -1, dtype=np.int64)
    sizes = np.minimum(np.arange(k), m).astype(np.int64)
    for lo in range(0, k, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, k)
        if lo == 0 and hi == 1:
            continue
        d2 = sq[lo:hi, None] + sq[None, :hi] - 2.0 * (Xs[lo:hi] @ Xs[:hi].T)
        cols = np.arange(hi)
        mask = cols[None, :] >= np.arange(lo, hi)[:, None]
        d2[mask] = np.inf
        for i in range(hi - lo):
            j = lo + i
            s = sizes[j]
            if s == 0:
                continue
            row = d2[i, :j]
            if s < j:
                cand = np.argpartition(row, s - 1)[:s]
            else:
                cand = np.arange(j)
            cand = cand[np.lexsort((cand, row[cand]))]
            neighbors[j, :s] = cand
    return neighbors, sizes


def training_plan(part: BlockPartition, orders: list[MaximinOrder], X: np.ndarray,
                  hp: Hyperparameters, m: int) -> ConditioningPlan:
    """Within-block predecessor conditioning sets of size min(j-1, m).

    The j-th point of each ordered block conditions on its m nearest earlier
    points of the same block under the scaled distance; while fewer than m
    predecessors exist, all of them are used.
    """
    if m < 1:
        raise ConfigError("conditioning-set size m must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xl = X / hp.lengthscales
    point_order = np.concatenate([o.order for o in orders])
    neighbors = np.full((part.n, m), -1, dtype=np.int64)
    sizes = np.empty(part.n, dtype=np.int64)
    row = 0
    for o in orders:
        k = o.order.shape[0]
        nbr_pos, sz = _nearest_predecessors(Xl[o.order], m)
        valid = nbr_pos >= 0
        nbr_idx = np.where(valid, o.order[np.clip(nbr_pos, 0, None)], -1)
        neighbors[row : row + k] = nbr_idx
        sizes[row : row + k] = sz
        row += k
    return ConditioningPlan(mode="training", neighbors=neighbors, sizes=sizes,
                            point_order=point_order, block_of=part.block_of())


def prediction_plan(train_X: np.ndarray, test_X: np.ndarray, hp: Hyperparameters,
                    m_p: int, seed: int) -> ConditioningPlan:
    """Sequential prediction conditioning sets over the augmented pool.

    Training and test sets are maximin-ordered separately (no thinning). The
    k-th ordered test point takes its m_p nearest points among all training
    rows plus the k-1 test points already predicted; indices returned are pool
    positions (train block first, then ordered test block).
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    if train_X.shape[0] == 0:
        raise DataError("prediction needs at least one training point")
    if m_p < 1:
        raise ConfigError("prediction conditioning-set size m_p must be >= 1")

    tr_seed = int(substream(seed, "prediction-train").integers(2**31))
    te_seed = int(substream(seed, "prediction-test").integers(2**31))
    train_order = maximin_order(train_X, hp, tr_seed).order
    test_order = maximin_order(test_X, hp, te_seed).order

    n_train, n_test = train_X.shape[0], test_X.shape[0]
    pool = np.vstack([train_X[train_order], test_X[test_order]]) / hp.lengthscales
    pool_sq = np.einsum("id,id->i", pool, pool)

    neighbors = np.full((n_test, m_p), -1, dtype=np.int64)
    sizes = np.empty(n_test, dtype=np.int64)
    for k in range(n_test):
        avail = n_train + k
        q = pool[n_train + k]
        d2 = pool_sq[:avail] - 2.0 * (pool[:avail] @ q) + q @ q
        s = min(m_p, avail)
        if s < avail:
            cand = np.argpartition(d2, s - 1)[:s]
        else:
            cand = np.arange(avail)
        cand = cand[np.lexsort((cand, d2[cand]))]
        neighbors[k, :s] = cand
        sizes[k] = s
    return ConditioningPlan(mode="prediction", neighbors=neighbors, sizes=sizes,
                            train_order=train_order, test_order=test_order)
