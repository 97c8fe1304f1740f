"""Time-indexed regression data: CSV ingestion, canonicalization, standardization.

A `Dataset` is immutable after construction (arrays are marked read-only) so
block trainers can share it freely across workers.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import DataError

MISSING_TOKENS = ["", "NA"]


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for ingestion: one response, >=1 covariates, optional time."""

    response: str
    covariates: tuple[str, ...] | None = None
    time: str | None = None


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix x (n, d), response y (n,), strictly increasing time index t (n,)."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    colnames: tuple[str, ...] = ()
    time_synthesized: bool = False  # t_i = i because the source had no time column
    dropped_rows: int = 0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        t = np.asarray(self.t, dtype=float).ravel()
        if x.shape[0] != y.shape[0] or y.shape[0] != t.shape[0]:
            raise DataError(f"length mismatch: x has {x.shape[0]} rows, y {y.shape[0]}, t {t.shape[0]}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError("dataset needs at least one row and one covariate column")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
            raise DataError("dataset contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise DataError("time index must be strictly increasing; canonicalize before construction")
        for arr in (x, y, t):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        if not self.colnames:
            object.__setattr__(self, "colnames", tuple(f"x{j+1}" for j in range(x.shape[1])))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass
class Standardization:
    """Per-column centering/scaling for x and y; scales are strictly positive."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    applied: bool = True

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_mean) / self.x_scale

    def destandardize_mean(self, mean: np.ndarray) -> np.ndarray:
        return np.asarray(mean) * self.y_scale + self.y_mean

    def destandardize_sd(self, sd: np.ndarray) -> np.ndarray:
        return np.asarray(sd) * self.y_scale


def _canonical_time(t: np.ndarray) -> np.ndarray:
    """Strictly increasing time values; ties broken by position then replaced by rank."""
    if np.unique(t).shape[0] != t.shape[0]:
        return np.arange(1.0, t.shape[0] + 1.0)
    return t


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a header-full CSV into a Dataset.

    Rows are sorted by the time column (stable); when the schema names no time
    column, t_i = i over the retained rows. Rows with any missing value in the
    selected columns are dropped and counted. Constant covariate columns are
    dropped with a warning.
    """
    try:
        frame = pd.read_csv(path, na_values=MISSING_TOKENS, keep_default_na=False,
                            encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    covariates = schema.covariates
    if covariates is None:
        skip = {schema.response} | ({schema.time} if schema.time else set())
        covariates = tuple(c for c in frame.columns if c not in skip)
    missing = [c for c in (schema.response, *covariates, *( [schema.time] if schema.time else [] ))
               if c not in frame.columns]
    if missing:
        raise DataError(f"schema names columns absent from {path}: {missing}")
    if len(covariates) == 0:
        raise DataError("schema must name at least one covariate column")

    cols = list(covariates) + [schema.response] + ([schema.time] if schema.time else [])
    sub = frame[cols].apply(pd.to_numeric, errors="coerce")
    finite = np.isfinite(sub.to_numpy(dtype=float)).all(axis=1)
    dropped = int((~finite).sum())
    sub = sub.loc[finite]
    if len(sub) == 0:
        raise DataError(f"{path}: no usable rows after dropping {dropped} incomplete rows")

    if schema.time:
        order = np.argsort(sub[schema.time].to_numpy(), kind="stable")
        sub = sub.iloc[order]
        t = _canonical_time(sub[schema.time].to_numpy(dtype=float))
        synthesized = False
    else:
        t = np.arange(1.0, len(sub) + 1.0)
        synthesized = True

    x = sub[list(covariates)].to_numpy(dtype=float)
    keep = []
    for j, name in enumerate(covariates):
        if np.ptp(x[:, j]) == 0.0:
            warnings.warn(f"covariate column {name!r} is constant; dropped as non-informative")
        else:
            keep.append(j)
    if not keep:
        raise DataError("all covariate columns are constant")
    x = x[:, keep]
    names = tuple(covariates[j] for j in keep)

    return Dataset(x=x, y=sub[schema.response].to_numpy(dtype=float), t=t,
                   colnames=names, time_synthesized=synthesized, dropped_rows=dropped)


def standardize(ds: Dataset) -> tuple[Dataset, Standardization]:
    """Center and scale every covariate column and y to sample mean 0, sample sd 1.

    Columns with zero variance are dropped with a warning. Requires n >= 2.
    """
    if ds.n < 2:
        raise DataError("standardization needs at least two rows")
    sd_x = ds.x.std(axis=0, ddof=1)
    keep = np.flatnonzero(sd_x > 0)
    if keep.shape[0] < ds.d:
        for j in np.flatnonzero(sd_x == 0):
            warnings.warn(f"covariate column {ds.colnames[j]!r} has zero variance; dropped")
    if keep.shape[0] == 0:
        raise DataError("no covariate column has positive variance")
    sd_y = float(ds.y.std(ddof=1))
    if sd_y <= 0:
        raise DataError("response has zero variance; nothing to model")

    x = ds.x[:, keep]
    std = Standardization(x_mean=x.mean(axis=0), x_scale=sd_x[keep],
                          y_mean=float(ds.y.mean()), y_scale=sd_y)
    out = Dataset(x=(x - std.x_mean) / std.x_scale,
                  y=(ds.y - std.y_mean) / std.y_scale,
                  t=ds.t,
                  colnames=tuple(ds.colnames[j] for j in keep),
                  time_synthesized=ds.time_synthesized,
                  dropped_rows=ds.dropped_rows)
    return out, std


def destandardize(ds: Dataset, std: Standardization) -> Dataset:
    """Inverse of `standardize` on a dataset with the same retained columns."""
    return replace(ds,
                   x=ds.x * std.x_scale + std.x_mean,
                   y=ds.y * std.y_scale + std.y_mean)
