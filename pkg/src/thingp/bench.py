"""Robot-arm benchmark: AR-correlated simulator, metrics, and experiment protocols.

Three scenarios mirror the low/moderate/high autocorrelation settings: a Latin
hypercube design (no autocorrelation) and AR-driven joint angle/segment length
series with lag orders 13 and 24. The AR/MA coefficient shapes are calibrated
so the thinning-number selection lands near 2 / 15 / 23 at n = 20000; the
constants live in DEFAULT_CALIBRATION and every protocol accepts overrides.
"""

import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .blockmodels import (TwinBlendParams, auto_sizes, ensemble_predict, fit_twin_ensemble,
                          lagp_single_block_predict, lagp_unthinned_predict)
from .dataset import Dataset, standardize
from .errors import ConfigError, DataError
from .kernels import MATERN15, SQEXP, KernelSpec
from .rng import substream
from .thinning import max_thinning_for, partition, select_thinning_number
from .vecchia import FitConfig, PredictionResult, fit, predict

METHODS = ("sv", "sv-xt", "thinned-sv", "twin", "thinned-twin", "lagp", "thinned-lagp")

ANGLE_DOMAIN = (0.0, 2.0 * np.pi)
LENGTH_DOMAIN = (0.0, 1.0)

DEFAULT_CALIBRATION = {
    "moderate": {"M": 13, "gamma": 1.0, "rho": 0.95, "psi0": 0.5, "noise_sd": 0.5,
                 "angle_amp": 2.0, "length_amp": 1.0},
    "high": {"M": 24, "gamma": 1.2, "rho": 0.95, "psi0": 0.5, "noise_sd": 0.5,
             "angle_amp": 2.0, "length_amp": 1.0},
}

SCENARIOS = ("low", "moderate", "high")


def _companion_radius(phi: np.ndarray) -> float:
    """Spectral radius of the AR companion matrix."""
    M = phi.shape[0]
    if M == 1:
        return float(abs(phi[0]))
    C = np.zeros((M, M))
    C[0] = phi
    C[1:, :-1] = np.eye(M - 1)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def _scale_to_radius(shape: np.ndarray, rho: float) -> np.ndarray:
    """Scale a coefficient shape so the AR companion spectral radius equals rho."""
    lo, hi = 0.0, 1.0
    while _companion_radius(hi * shape) < rho:
        hi *= 2.0
        if hi > 1e6:
            raise ConfigError("cannot reach the requested spectral radius")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _companion_radius(mid * shape) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * shape


@dataclass
class ArmArSpec:
    """AR/MA structure injected into the robot-arm simulator.

    M = 0 means the Latin-hypercube scenario with no autocorrelation. phi has
    one coefficient row per joint (shared by the angle and length series of
    that joint); psi shapes the moving-average noise on y.
    """

    M: int
    phi: np.ndarray | None = None  # (4, M)
    psi: np.ndarray | None = None  # (M,)
    innovation_sd: float = 1.0
    noise_sd: float = 0.5
    angle_amp: float = 2.0  # radians of arm rotation per sd of the angle series
    length_amp: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.M < 0:
            raise ConfigError("AR lag order M must be >= 0")
        if self.M == 0:
            self.phi = np.zeros((4, 0))
            self.psi = np.zeros(0)
            return
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.psi = np.asarray(self.psi, dtype=float).ravel()
        if self.phi.shape != (4, self.M) or self.psi.shape != (self.M,):
            raise ConfigError(f"need phi of shape (4, {self.M}) and psi of shape ({self.M},)")
        for i in range(4):
            radius = _companion_radius(self.phi[i])
            if radius >= 1.0:
                raise ConfigError(f"AR coefficients for joint {i + 1} are non-stationary "
                                  f"(companion spectral radius {radius:.3f} >= 1)")


def scenario_spec(name: str, seed: int, overrides: dict | None = None) -> ArmArSpec:
    """Scenario presets: low (LHS), moderate (M=13), high (M=24)."""
    if name == "low":
        return ArmArSpec(M=0, seed=seed)
    if name not in DEFAULT_CALIBRATION:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    cal = dict(DEFAULT_CALIBRATION[name])
    if overrides:
        cal.update(overrides)
    M = int(cal["M"])
    k = np.arange(1, M + 1, dtype=float)
    shape = k ** (-float(cal["gamma"]))
    row = _scale_to_radius(shape, float(cal["rho"]))
    phi = np.tile(row, (4, 1))
    psi = float(cal["psi0"]) / k
    return ArmArSpec(M=M, phi=phi, psi=psi, innovation_sd=float(cal.get("innovation_sd", 1.0)),
                     noise_sd=float(cal["noise_sd"]), angle_amp=float(cal["angle_amp"]),
                     length_amp=float(cal["length_amp"]), seed=seed)


def robot_arm(theta, length) -> float:
    """Distance of the four-segment arm's end effector from the origin."""
    theta = np.asarray(theta, dtype=float).ravel()
    length = np.asarray(length, dtype=float).ravel()
    xi = np.cumsum(theta)
    u = float(np.sum(length * np.cos(xi)))
    v = float(np.sum(length * np.sin(xi)))
    return float(np.sqrt(u * u + v * v))


def _arm_curve(Theta: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Vectorized robot arm over rows of joint angles and segment lengths."""
    xi = np.cumsum(Theta, axis=1)
    u = np.sum(L * np.cos(xi), axis=1)
    v = np.sum(L * np.sin(xi), axis=1)
    return np.sqrt(u * u + v * v)


def _ar_series(phi: np.ndarray, n: int, sd: float, rng: np.random.Generator) -> np.ndarray:
    """One AR(M) realization of length n with N(0,1) pre-history."""
    M = phi.shape[0]
    pre = rng.standard_normal(M)
    eps = rng.standard_normal(n) * sd
    out = np.empty(n + M)
    out[:M] = pre
    for t in range(M, n + M):
        out[t] = phi @ out[t - M : t][::-1] + eps[t - M]
    return out[M:]


def _standardize_series(s: np.ndarray) -> np.ndarray:
    sd = s.std()
    return (s - s.mean()) / (sd if sd > 0 else 1.0)


def _simulate_one(spec: ArmArSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One realization of (x, y) with the requested autocorrelation structure."""
    if spec.M == 0:
        sampler = qmc.LatinHypercube(d=8, seed=rng)
        u = sampler.random(n)
        x = np.empty((n, 8))
        x[:, :4] = ANGLE_DOMAIN[0] + u[:, :4] * (ANGLE_DOMAIN[1] - ANGLE_DOMAIN[0])
        x[:, 4:] = LENGTH_DOMAIN[0] + u[:, 4:] * (LENGTH_DOMAIN[1] - LENGTH_DOMAIN[0])
        y = _arm_curve(x[:, :4], x[:, 4:])
        return x, y

    x = np.empty((n, 8))
    for i in range(4):
        x[:, i] = _standardize_series(_ar_series(spec.phi[i], n, spec.innovation_sd, rng))
    for i in range(4):
        x[:, 4 + i] = _standardize_series(_ar_series(spec.phi[i], n, spec.innovation_sd, rng))
    y = _arm_curve(spec.angle_amp * x[:, :4], spec.length_amp * x[:, 4:])
    if np.any(spec.psi != 0.0) and spec.noise_sd > 0:
        eps = rng.standard_normal(n + spec.M) * spec.noise_sd
        noise = np.array([spec.psi @ eps[t - spec.M : t][::-1]
                          for t in range(spec.M, n + spec.M)])
        y = y + noise
    return x, y


COLNAMES = tuple(f"theta{i}" for i in range(1, 5)) + tuple(f"len{i}" for i in range(1, 5))


def simulate(spec: ArmArSpec, n_train: int, n_test: int) -> tuple[Dataset, Dataset]:
    """Training and test sets as separate realizations; t is the sequential record number."""
    if spec.M > 0 and min(n_train, n_test) <= spec.M:
        raise ConfigError(f"need more than M={spec.M} points per realization")
    rng = substream(spec.seed, "arm-simulator")
    x_tr, y_tr = _simulate_one(spec, n_train, rng)
    x_te, y_te = _simulate_one(spec, n_test, rng)
    train = Dataset(x=x_tr, y=y_tr, t=np.arange(1.0, n_train + 1.0), colnames=COLNAMES,
                    time_synthesized=True)
    test = Dataset(x=x_te, y=y_te, t=np.arange(n_train + 1.0, n_train + n_test + 1.0),
                   colnames=COLNAMES, time_synthesized=True)
    return train, test


def rmse(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Root mean squared prediction error."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ConfigError("rmse needs equal-length vectors")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def nlpd(y_true: np.ndarray, means: np.ndarray, sds: np.ndarray) -> float:
    """Negative log predictive density, averaged with the 1/(2 n) convention."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    means = np.asarray(means, dtype=float).ravel()
    sds = np.asarray(sds, dtype=float).ravel()
    bad = np.flatnonzero(sds <= 0)
    if bad.shape[0]:
        raise DataError(f"non-positive predictive sd at index {int(bad[0])}")
    var = sds**2
    return float(np.mean((y_true - means) ** 2 / var + np.log(2.0 * np.pi * var)) / 2.0)


@dataclass
class MetricReport:
    method: str
    scenario: str
    seed: int
    rmse: float
    nlpd: float | None
    runtime_seconds: float
    T_used: int


@dataclass
class ProtocolConfig:
    """Declarative protocol description (CLI `bench` maps straight onto this)."""

    protocol: str
    methods: tuple[str, ...]
    scenario: str = "moderate"
    n_train: int = 2000
    n_test: int = 1000
    replications: int = 3
    seeds: tuple[int, ...] = tuple(range(1, 11))
    T: int | None = None
    T_grid: tuple[int, ...] = ()
    m: int = 30
    m_p: int = 140
    n_start: int = 6
    n_end: int = 30
    kernel: str = MATERN15
    data_seed: int = 1
    method_seed: int = 1
    calibration: dict = field(default_factory=dict)
    twin_n_g: int | None = None
    twin_k_loc: int = 50
    twin_val_fraction: float = 0.1
    outdir: str | None = None

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.protocol not in ("replication", "thinning-sweep", "stability"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")


def _twin_params(cfg: ProtocolConfig, n: int, d: int) -> TwinBlendParams:
    if cfg.twin_n_g is not None:
        return TwinBlendParams(n_g=cfg.twin_n_g, k_loc=cfg.twin_k_loc,
                               validation_fraction=cfg.twin_val_fraction)
    return auto_sizes(n, d, cfg.twin_k_loc, cfg.twin_val_fraction)


def run_method(name: str, train: Dataset, test: Dataset, *, m: int = 30, m_p: int = 140,
               seed: int = 1, T: int | None = None, kernel: str = MATERN15,
               n_start: int = 6, n_end: int = 30,
               twin_params: TwinBlendParams | None = None
               ) -> tuple[PredictionResult, int, float]:
    """Standardize, fit, predict, destandardize; returns (prediction, T used, runtime).

    T=None lets thinned methods pick T by the PACF rule (capped so each block
    can hold a size-m conditioning set).
    """
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}")
    t0 = time.perf_counter()
    std_train, std = standardize(train)
    thinned = name.startswith("thinned-")
    if thinned:
        T_used = T if T is not None else select_thinning_number(std_train)
        if name == "thinned-sv":
            T_cap = max_thinning_for(std_train.n, m)
            if T_used > T_cap:
                warnings.warn(f"T={T_used} leaves blocks too small for m={m}; capped at {T_cap}")
                T_used = T_cap
        T_used = max(1, min(T_used, std_train.n))
    else:
        T_used = 1
    part = partition(std_train, T_used)

    if name in ("sv", "sv-xt", "thinned-sv"):
        include_time = name == "sv-xt"
        cfg = FitConfig(include_time=include_time, seed=seed)
        model, _ = fit(std_train, part, KernelSpec(kernel), m, cfg)
        X_test = std.transform_x(test.x)
        if include_time:
            X_test = np.column_stack([X_test, test.t])
        pred = predict(model, std_train, X_test, m_p, seed)
    elif name in ("twin", "thinned-twin"):
        params = twin_params or auto_sizes(std_train.n, std_train.d)
        models = fit_twin_ensemble(std_train, part, params, sizes_from_full=True, seed=seed)
        pred = ensemble_predict(models, std.transform_x(test.x)).to_prediction_result()
    else:
        X_test = std.transform_x(test.x)
        means = np.empty(X_test.shape[0])
        sds = np.empty(X_test.shape[0])
        for i in range(X_test.shape[0]):
            if name == "thinned-lagp":
                mu, sd = lagp_single_block_predict(part, std_train, X_test[i],
                                                   KernelSpec(SQEXP), n_start, n_end)
            else:
                mu, sd = lagp_unthinned_predict(std_train, X_test[i], KernelSpec(SQEXP),
                                                n_start, n_end)
            means[i], sds[i] = mu, sd
        pred = PredictionResult(mean=means, sd=sds)

    out = PredictionResult(mean=std.destandardize_mean(pred.mean),
                           sd=std.destandardize_sd(pred.sd))
    return out, T_used, time.perf_counter() - t0


def config_hash(cfg: ProtocolConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: list[str], rows: list[list], header_comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_table_md(path, columns: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write("| " + " | ".join(columns) + " |\n")
        fh.write("|" + "|".join("---" for _ in columns) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(_fmt(v) for v in row) + " |\n")


def _write_sweep_plot(path, Ts: np.ndarray, rmses: np.ndarray) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_mark = max(1, min(25, len(Ts) // 4))
    order = np.argsort(rmses)
    low, high = set(order[:n_mark].tolist()), set(order[-n_mark:].tolist())
    colors = ["green" if i in low else "red" if i in high else "gray" for i in range(len(Ts))]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.scatter(Ts, rmses, c=colors, s=24)
    ax.set_xlabel("thinning number T")
    ax.set_ylabel("out-of-sample RMSE")
    ax.set_title("Effect of the thinning number on RMSE")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_protocol(cfg: ProtocolConfig) -> list[MetricReport]:
    """Run one protocol; writes results.csv, table.md (and sweep plot) when outdir is set."""
    if cfg.protocol == "replication":
        rows = _protocol_replication(cfg)
    elif cfg.protocol == "thinning-sweep":
        rows = _protocol_sweep(cfg)
    else:
        rows = _protocol_stability(cfg)

    if cfg.outdir is not None:
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        comment = f"config_hash={config_hash(cfg)} seed={cfg.method_seed}"
        cols = ["method", "scenario", "seed", "T", "rmse", "nlpd", "runtime_seconds",
                "no_thinning"]
        csv_rows = [[r.method, r.scenario, r.seed, r.T_used, r.rmse, r.nlpd,
                     r.runtime_seconds, int(r.T_used == 1)] for r in rows]
        write_csv(out / "results.csv", cols, csv_rows, comment)
        _write_table_md(out / "table.md", cols, csv_rows)
        if cfg.protocol == "thinning-sweep" and rows:
            _write_sweep_plot(out / "sweep.svg", np.array([r.T_used for r in rows]),
                              np.array([r.rmse for r in rows]))
        _write_summary(out / "summary.md", cfg, rows)
    return rows


def _measure(cfg: ProtocolConfig, name: str, train: Dataset, test: Dataset, seed: int,
             T: int | None) -> MetricReport:
    twin = _twin_params(cfg, train.n, train.d) if name in ("twin", "thinned-twin") else None
    pred, T_used, runtime = run_method(name, train, test, m=cfg.m, m_p=cfg.m_p, seed=seed,
                                       T=T, kernel=cfg.kernel, n_start=cfg.n_start,
                                       n_end=cfg.n_end, twin_params=twin)
    return MetricReport(method=name, scenario=cfg.scenario, seed=seed,
                        rmse=rmse(test.y, pred.mean), nlpd=nlpd(test.y, pred.mean, pred.sd),
                        runtime_seconds=runtime, T_used=T_used)


def _protocol_replication(cfg: ProtocolConfig) -> list[MetricReport]:
    rows = []
    for rep in range(cfg.replications):
        spec = scenario_spec(cfg.scenario, cfg.data_seed + rep, cfg.calibration)
        train, test = simulate(spec, cfg.n_train, cfg.n_test)
        for name in cfg.methods:
            report = _measure(cfg, name, train, test, cfg.method_seed, cfg.T)
            report.seed = cfg.data_seed + rep
            rows.append(report)
    return rows


def _protocol_sweep(cfg: ProtocolConfig) -> list[MetricReport]:
    if not cfg.T_grid:
        raise ConfigError("thinning-sweep needs a T grid")
    spec = scenario_spec(cfg.scenario, cfg.data_seed, cfg.calibration)
    train, test = simulate(spec, cfg.n_train, cfg.n_test)
    rows = []
    for T in cfg.T_grid:
        for name in cfg.methods or ("thinned-sv",):
            rows.append(_measure(cfg, name, train, test, cfg.method_seed, int(T)))
    return rows


def _protocol_stability(cfg: ProtocolConfig) -> list[MetricReport]:
    spec = scenario_spec(cfg.scenario, cfg.data_seed, cfg.calibration)
    train, test = simulate(spec, cfg.n_train, cfg.n_test)
    rows = []
    for name in cfg.methods:
        for seed in cfg.seeds:
            rows.append(_measure(cfg, name, train, test, int(seed), cfg.T))
    return rows


def _write_summary(path, cfg: ProtocolConfig, rows: list[MetricReport]) -> None:
    lines = [f"# {cfg.protocol} protocol", ""]
    if cfg.protocol == "stability" and rows:
        lines.append("| method | min RMSE | max RMSE | spread/(mean) |")
        lines.append("|---|---|---|---|")
        for name in cfg.methods:
            vals = np.array([r.rmse for r in rows if r.method == name])
            if vals.size:
                spread = (vals.max() - vals.min()) / vals.mean()
                lines.append(f"| {name} | {vals.min():.6g} | {vals.max():.6g} | {spread:.4g} |")
    elif rows:
        lines.append("| method | mean RMSE | sd RMSE | mean NLPD | mean runtime (s) |")
        lines.append("|---|---|---|---|---|")
        for name in dict.fromkeys(r.method for r in rows):
            sel = [r for r in rows if r.method == name]
            vals = np.array([r.rmse for r in sel])
            nl = np.array([r.nlpd for r in sel if r.nlpd is not None], dtype=float)
            rt = np.array([r.runtime_seconds for r in sel])
            lines.append(f"| {name} | {vals.mean():.6g} | {vals.std(ddof=1) if vals.size > 1 else 0.0:.3g} "
                         f"| {nl.mean() if nl.size else float('nan'):.6g} | {rt.mean():.4g} |")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
