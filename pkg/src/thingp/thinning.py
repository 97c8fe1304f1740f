"""PACF estimation, thinning-number selection, and round-robin block partitioning.

The thinning number T is the smallest lag at which every monitored series'
partial autocorrelation falls inside the white-noise band 2/sqrt(n); the data
are then dealt round-robin into T blocks so that within-block neighbors are
temporally distant.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError

DEFAULT_H_MAX = 100


@dataclass(frozen=True)
class PacfTable:
    """Partial autocorrelations (lags 1..h_max) for each monitored series."""

    names: tuple[str, ...]
    values: np.ndarray  # (n_series, h_max)
    threshold: float

    def __post_init__(self):
        if np.any(np.abs(self.values) > 1.0 + 1e-9):
            raise DataError("partial autocorrelations must lie in [-1, 1]")


@dataclass(frozen=True)
class ThinningSelection:
    """Outcome of the selection rule, with the series/lag that bound it."""

    T: int
    binding_series: str
    binding_lag: int
    saturated: bool
    table: PacfTable


@dataclass(frozen=True)
class BlockPartition:
    """T round-robin blocks of record indices over the time-sorted dataset."""

    T: int
    blocks: tuple[np.ndarray, ...]
    n: int

    def __post_init__(self):
        if self.T != len(self.blocks):
            raise ConfigError("partition must hold exactly T blocks")
        for b in self.blocks:
            b.flags.writeable = False

    def block_of(self) -> np.ndarray:
        """Map record index -> block id."""
        out = np.empty(self.n, dtype=np.int64)
        for z, b in enumerate(self.blocks):
            out[b] = z
        return out

    def min_block_size(self) -> int:
        return min(b.shape[0] for b in self.blocks)


def _autocovariance(series: np.ndarray, h_max: int) -> np.ndarray:
    """Biased sample autocovariances gamma(0..h_max)."""
    n = series.shape[0]
    centered = series - series.mean()
    gamma = np.empty(h_max + 1)
    for h in range(h_max + 1):
        gamma[h] = centered[: n - h] @ centered[h:] / n
    return gamma


def pacf(series: np.ndarray, h_max: int) -> np.ndarray:
    """Partial autocorrelations at lags 1..h_max by Durbin-Levinson recursion.

    Uses biased sample autocovariances, which keep every partial correlation
    inside [-1, 1].
    """
    series = np.asarray(series, dtype=float).ravel()
    if series.shape[0] <= h_max + 1:
        raise DataError(f"series length {series.shape[0]} too short for h_max={h_max}")
    gamma = _autocovariance(series, h_max)
    if gamma[0] <= 0:
        raise DataError("PACF undefined for a constant series")
    rho = gamma / gamma[0]

    out = np.empty(h_max)
    phi = np.array([rho[1]])
    out[0] = rho[1]
    for h in range(2, h_max + 1):
        num = rho[h] - phi @ rho[h - 1 : 0 : -1]
        den = 1.0 - phi @ rho[1:h]
        phi_hh = num / den if den > 0 else 0.0
        out[h - 1] = phi_hh
        phi = np.concatenate([phi - phi_hh * phi[::-1], [phi_hh]])
    return out


def pacf_table(ds: Dataset, include_y: bool = True, h_max: int = DEFAULT_H_MAX) -> PacfTable:
    """PACF of every monitored series (covariate columns, plus y when include_y)."""
    names = list(ds.colnames)
    series = [ds.x[:, j] for j in range(ds.d)]
    if include_y:
        names.append("y")
        series.append(ds.y)
    values = np.vstack([pacf(s, h_max) for s in series])
    return PacfTable(names=tuple(names), values=values, threshold=2.0 / np.sqrt(ds.n))


def select_thinning(ds: Dataset, include_y: bool = True,
                    h_max: int = DEFAULT_H_MAX) -> ThinningSelection:
    """Selection rule with diagnostics: smallest lag where all series pass the band."""
    if ds.n <= h_max + 1:
        raise DataError(f"need more than h_max+1={h_max + 1} rows to select a thinning number")
    table = pacf_table(ds, include_y=include_y, h_max=h_max)
    abs_vals = np.abs(table.values)
    passes = np.all(abs_vals <= table.threshold, axis=0)
    hits = np.flatnonzero(passes)
    if hits.shape[0] == 0:
        warnings.warn(f"no lag up to h_max={h_max} brings every series inside the white-noise "
                      "band; saturating at h_max (override T manually if needed)")
        worst = int(np.argmax(abs_vals[:, h_max - 1]))
        return ThinningSelection(T=h_max, binding_series=table.names[worst],
                                 binding_lag=h_max, saturated=True, table=table)
    T = int(hits[0]) + 1
    if T == 1:
        return ThinningSelection(T=1, binding_series="(none)", binding_lag=1,
                                 saturated=False, table=table)
    worst = int(np.argmax(abs_vals[:, T - 2]))
    return ThinningSelection(T=T, binding_series=table.names[worst], binding_lag=T - 1,
                             saturated=False, table=table)


def select_thinning_number(ds: Dataset, include_y: bool = True,
                           h_max: int = DEFAULT_H_MAX) -> int:
    """The thinning number T for a dataset (see `select_thinning` for diagnostics)."""
    return select_thinning(ds, include_y=include_y, h_max=h_max).T


def partition(ds: Dataset, T: int) -> BlockPartition:
    """Deal the time-sorted records round-robin into T blocks.

    Block z holds the record indices congruent to z modulo T, so consecutive
    members of a block are exactly T apart in time order.
    """
    n = ds.n
    if not 1 <= T <= n:
        raise ConfigError(f"thinning number T={T} outside valid range 1..{n}")
    blocks = tuple(np.arange(z, n, T, dtype=np.int64) for z in range(T))
    return BlockPartition(T=T, blocks=blocks, n=n)


def max_thinning_for(n: int, m: int) -> int:
    """Largest T keeping every block big enough for size-m conditioning sets.

    Requires floor(n/T) >= m + 1: each block must hold a point plus m
    candidates.
    """
    if n <= m:
        raise ConfigError(f"no valid thinning number: n={n} <= m={m}")
    return n // (m + 1)
