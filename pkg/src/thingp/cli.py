"""Unified command line: thinning selection, model fitting/prediction, simulator, bench.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Models persist as versioned key=value text files; every output CSV starts with
a `# config_hash=... seed=...` comment so reruns are byte-comparable.
"""

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import bench, parallel
from .blockmodels import (TwinBlendParams, TwinModel, auto_sizes, ensemble_predict,
                          fit_twin_ensemble, lagp_single_block_predict, lagp_unthinned_predict)
from .dataset import CsvSchema, Dataset, Standardization, load_csv, standardize
from .errors import ConfigError, DataError, NumericalError, ThinGPError
from .kernels import MATERN15, SQEXP, Hyperparameters, KernelSpec
from .temporal import ResidualSeries, combine, fit_g, predict_g_series
from .thinning import max_thinning_for, partition, select_thinning
from .vecchia import (FitConfig, PredictionResult, VecchiaModel, fit, predict,
                      training_residuals)

FORMAT_VERSION = 1
KERNEL_FLAGS = {"matern15": MATERN15, "sqexp": SQEXP}


def _arg_hash(args: argparse.Namespace) -> str:
    blob = repr(sorted(vars(args).items(), key=lambda kv: kv[0]))
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def _schema_from_args(args) -> CsvSchema:
    covs = tuple(args.covariates.split(",")) if args.covariates else None
    return CsvSchema(response=args.response, covariates=covs, time=args.time)


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="training CSV path")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--covariates", default=None,
                   help="comma-separated covariate columns (default: all others)")
    p.add_argument("--time", default=None, help="time column name (default: t_i = i)")


def _write_kv(path, pairs: dict) -> None:
    with open(path, "w") as fh:
        for key, value in pairs.items():
            fh.write(f"{key}={value}\n")


def _read_kv(path) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    pairs = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        pairs[key] = value
    if int(pairs.get("format_version", -1)) != FORMAT_VERSION:
        raise DataError(f"unsupported model format version in {path}")
    return pairs


def _vec(arr) -> str:
    return ",".join(repr(float(v)) for v in np.atleast_1d(arr))


def _unvec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")]) if text else np.array([])


def _std_pairs(std: Standardization, schema: CsvSchema, colnames, data_path) -> dict:
    return {
        "data_path": data_path,
        "response": schema.response,
        "covariates": ",".join(schema.covariates) if schema.covariates else "",
        "time_column": schema.time or "",
        "colnames": ",".join(colnames),
        "x_mean": _vec(std.x_mean),
        "x_scale": _vec(std.x_scale),
        "y_mean": repr(std.y_mean),
        "y_scale": repr(std.y_scale),
    }


def _reload_training(pairs: dict, data_override=None) -> tuple[Dataset, Standardization]:
    schema = CsvSchema(response=pairs["response"],
                       covariates=tuple(pairs["covariates"].split(",")) if pairs["covariates"] else None,
                       time=pairs["time_column"] or None)
    ds = load_csv(data_override or pairs["data_path"], schema)
    std = Standardization(x_mean=_unvec(pairs["x_mean"]), x_scale=_unvec(pairs["x_scale"]),
                          y_mean=float(pairs["y_mean"]), y_scale=float(pairs["y_scale"]))
    keep = [ds.colnames.index(c) for c in pairs["colnames"].split(",")]
    std_ds = Dataset(x=(ds.x[:, keep] - std.x_mean) / std.x_scale,
                     y=(ds.y - std.y_mean) / std.y_scale, t=ds.t,
                     colnames=tuple(pairs["colnames"].split(",")),
                     time_synthesized=ds.time_synthesized)
    return std_ds, std


def _load_test(pairs: dict, test_path) -> tuple[Dataset, np.ndarray]:
    """Test dataset plus its standardized covariate matrix in the model's columns."""
    schema = CsvSchema(response=pairs["response"],
                       covariates=tuple(pairs["colnames"].split(",")),
                       time=pairs["time_column"] or None)
    ds = load_csv(test_path, schema)
    x = (ds.x - _unvec(pairs["x_mean"])) / _unvec(pairs["x_scale"])
    return ds, x


def _predictions_csv(path, args, f_pred: PredictionResult, g_pred: PredictionResult | None,
                     combined: PredictionResult | None, seed) -> None:
    if combined is None:
        cols = ["mean", "sd"]
        rows = [[f_pred.mean[i], f_pred.sd[i]] for i in range(f_pred.mean.shape[0])]
    else:
        cols = ["mean", "sd", "f_mean", "g_mean"]
        rows = [[combined.mean[i], combined.sd[i], f_pred.mean[i], g_pred.mean[i]]
                for i in range(combined.mean.shape[0])]
    bench.write_csv(path, cols, rows, f"config_hash={_arg_hash(args)} seed={seed}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_thin_select(args) -> int:
    ds = load_csv(args.data, _schema_from_args(args))
    std_ds, _ = standardize(ds)
    sel = select_thinning(std_ds, include_y=not args.exclude_y, h_max=args.h_max)
    print(f"T={sel.T} binding_series={sel.binding_series} binding_lag={sel.binding_lag} "
          f"saturated={int(sel.saturated)}")
    return 0


def _select_T(args, std_ds, m=None) -> int:
    if args.T is not None:
        return args.T
    if not args.thinned:
        return 1
    T = select_thinning(std_ds).T
    if m is not None:
        T = min(T, max_thinning_for(std_ds.n, m))
    return max(T, 1)


def _cmd_fit_sv(args) -> int:
    schema = _schema_from_args(args)
    ds = load_csv(args.data, schema)
    std_ds, std = standardize(ds)
    T = _select_T(args, std_ds, m=args.m)
    part = partition(std_ds, T)
    cfg = FitConfig(include_time=args.include_time, seed=args.seed)
    model, report = fit(std_ds, part, KernelSpec(KERNEL_FLAGS[args.kernel]), args.m, cfg)
    pairs = {
        "format_version": FORMAT_VERSION,
        "model": "sv",
        "kernel": model.spec.family,
        "include_time": int(model.include_time),
        "T": T,
        "m": args.m,
        "seed": args.seed,
        **_std_pairs(std, schema, std_ds.colnames, args.data),
        "time_mean": repr(model.time_mean),
        "time_scale": repr(model.time_scale),
        "lengthscales": _vec(model.hp.lengthscales),
        "sigma_f2": repr(model.hp.sigma_f2),
        "sigma_n2": repr(model.hp.sigma_n2),
    }
    _write_kv(args.model, pairs)
    print(f"fitted sv model: T={T} loglik={report.final_loglik:.4f} "
          f"iterations={report.iterations} converged={int(report.converged)} -> {args.model}")
    return 0


def _sv_from_pairs(pairs: dict) -> VecchiaModel:
    hp = Hyperparameters(_unvec(pairs["lengthscales"]), float(pairs["sigma_f2"]),
                         float(pairs["sigma_n2"]))
    return VecchiaModel(hp=hp, spec=KernelSpec(pairs["kernel"]), plan=None, partition=None,
                        m=int(pairs["m"]), seed=int(pairs["seed"]),
                        include_time=bool(int(pairs["include_time"])),
                        time_mean=float(pairs["time_mean"]),
                        time_scale=float(pairs["time_scale"]))


def _cmd_predict_sv(args) -> int:
    pairs = _read_kv(args.model)
    if pairs.get("model") != "sv":
        raise DataError(f"{args.model} is not an sv model file")
    std_ds, std = _reload_training(pairs, args.data)
    model = _sv_from_pairs(pairs)
    test_ds, x_test = _load_test(pairs, args.test)
    if model.include_time:
        x_test = np.column_stack([x_test, test_ds.t])
    f_std = predict(model, std_ds, x_test, args.mp, args.seed)
    f_pred = PredictionResult(mean=std.destandardize_mean(f_std.mean),
                              sd=std.destandardize_sd(f_std.sd))
    g_pred = combined = None
    if args.with_g:
        window = args.g_window or max(int(pairs["T"]), 1)
        resid_std = training_residuals(model, std_ds, args.mp)
        res = ResidualSeries(t=std_ds.t, r=resid_std * std.y_scale)
        g_model = fit_g(res, window)
        g_pred = predict_g_series(g_model, res, test_ds.t)
        combined = combine(f_pred, g_pred)
    _predictions_csv(args.out, args, f_pred, g_pred, combined, args.seed)
    print(f"wrote predictions for {x_test.shape[0]} rows -> {args.out}")
    return 0


def _cmd_fit_twin(args) -> int:
    schema = _schema_from_args(args)
    ds = load_csv(args.data, schema)
    std_ds, std = standardize(ds)
    T = _select_T(args, std_ds)
    part = partition(std_ds, T)
    if args.n_g is not None:
        params = TwinBlendParams(n_g=args.n_g, k_loc=args.k_loc,
                                 validation_fraction=args.val_fraction)
    else:
        params = auto_sizes(std_ds.n, std_ds.d, args.k_loc, args.val_fraction)
    models = fit_twin_ensemble(std_ds, part, params, sizes_from_full=True, seed=args.seed)
    pairs = {
        "format_version": FORMAT_VERSION,
        "model": "twin",
        "T": T,
        "n_g": params.n_g,
        "k_loc": params.k_loc,
        "val_fraction": params.validation_fraction,
        "seed": args.seed,
        **_std_pairs(std, schema, std_ds.colnames, args.data),
    }
    for z, mdl in enumerate(models):
        pairs[f"block{z}.support"] = ",".join(str(int(i)) for i in mdl.support_idx)
        pairs[f"block{z}.lengthscales"] = _vec(mdl.hp.lengthscales)
        pairs[f"block{z}.sigma_f2"] = repr(mdl.hp.sigma_f2)
        pairs[f"block{z}.sigma_n2"] = repr(mdl.hp.sigma_n2)
        pairs[f"block{z}.lam"] = repr(mdl.lam)
        pairs[f"block{z}.radius"] = repr(mdl.radius)
    _write_kv(args.model, pairs)
    lams = ",".join(f"{m.lam:.1f}" for m in models)
    print(f"fitted twin ensemble: T={T} n_g={params.n_g} k_loc={params.k_loc} "
          f"lambdas=[{lams}] -> {args.model}")
    return 0


def _cmd_predict_twin(args) -> int:
    pairs = _read_kv(args.model)
    if pairs.get("model") != "twin":
        raise DataError(f"{args.model} is not a twin model file")
    std_ds, std = _reload_training(pairs, args.data)
    T = int(pairs["T"])
    part = partition(std_ds, T)
    models = []
    for z in range(T):
        block = part.blocks[z]
        hp = Hyperparameters(_unvec(pairs[f"block{z}.lengthscales"]),
                             float(pairs[f"block{z}.sigma_f2"]),
                             float(pairs[f"block{z}.sigma_n2"]))
        support = np.array([int(v) for v in pairs[f"block{z}.support"].split(",")])
        models.append(TwinModel(std_ds.x[block], std_ds.y[block], support, hp,
                                float(pairs[f"block{z}.lam"]), float(pairs[f"block{z}.radius"]),
                                int(pairs["k_loc"])))
    test_ds, x_test = _load_test(pairs, args.test)
    ens = ensemble_predict(models, x_test)
    f_pred = PredictionResult(mean=std.destandardize_mean(ens.mean),
                              sd=std.destandardize_sd(ens.sd))
    g_pred = combined = None
    if args.with_g:
        window = args.g_window or max(T, 1)
        ens_train = ensemble_predict(models, std_ds.x)
        res = ResidualSeries(t=std_ds.t, r=(std_ds.y - ens_train.mean) * std.y_scale)
        g_model = fit_g(res, window)
        g_pred = predict_g_series(g_model, res, test_ds.t)
        combined = combine(f_pred, g_pred)
    _predictions_csv(args.out, args, f_pred, g_pred, combined, args.seed)
    print(f"wrote predictions for {x_test.shape[0]} rows -> {args.out}")
    return 0


def _cmd_predict_lagp(args) -> int:
    schema = _schema_from_args(args)
    ds = load_csv(args.data, schema)
    std_ds, std = standardize(ds)
    T = _select_T(args, std_ds)
    part = partition(std_ds, T)
    test_schema = CsvSchema(response=schema.response, covariates=std_ds.colnames,
                            time=schema.time)
    test_ds = load_csv(args.test, test_schema)
    x_test = (test_ds.x - std.x_mean) / std.x_scale
    means = np.empty(x_test.shape[0])
    sds = np.empty(x_test.shape[0])
    for i in range(x_test.shape[0]):
        if args.thinned:
            mu, sd = lagp_single_block_predict(part, std_ds, x_test[i], KernelSpec(SQEXP),
                                               args.n_start, args.n_end)
        else:
            mu, sd = lagp_unthinned_predict(std_ds, x_test[i], KernelSpec(SQEXP),
                                            args.n_start, args.n_end)
        means[i], sds[i] = mu, sd
    f_pred = PredictionResult(mean=std.destandardize_mean(means),
                              sd=std.destandardize_sd(sds))
    _predictions_csv(args.out, args, f_pred, None, None, args.seed)
    print(f"wrote predictions for {x_test.shape[0]} rows -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    spec = bench.scenario_spec(args.scenario, args.seed)
    train, test = bench.simulate(spec, args.n_train, args.n_test)
    comment = f"config_hash={_arg_hash(args)} seed={args.seed}"
    cols = list(bench.COLNAMES) + ["y", "t"]
    for ds, path in ((train, args.out_train), (test, args.out_test)):
        rows = [list(ds.x[i]) + [ds.y[i], ds.t[i]] for i in range(ds.n)]
        bench.write_csv(path, cols, rows, comment)
    print(f"simulated scenario={args.scenario} train={train.n} test={test.n} "
          f"-> {args.out_train}, {args.out_test}")
    return 0


def _parse_seeds(text: str) -> tuple[int, ...]:
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.split(","))


def _cmd_bench(args) -> int:
    methods = tuple(m for m in args.methods.split(",") if m) if args.methods else ()
    cfg = bench.ProtocolConfig(
        protocol=args.protocol,
        methods=methods,
        scenario=args.scenario,
        n_train=args.n_train,
        n_test=args.n_test,
        replications=args.replications,
        seeds=_parse_seeds(args.seeds),
        T=args.T,
        T_grid=tuple(int(v) for v in args.T_grid.split(",")) if args.T_grid else (),
        m=args.m,
        m_p=args.mp,
        n_start=args.n_start,
        n_end=args.n_end,
        kernel=KERNEL_FLAGS[args.kernel],
        data_seed=args.data_seed,
        method_seed=args.seed,
        twin_n_g=args.n_g,
        twin_k_loc=args.k_loc,
        twin_val_fraction=args.val_fraction,
        outdir=args.out,
    )
    rows = bench.run_protocol(cfg)
    for r in rows:
        nl = f"{r.nlpd:.4f}" if r.nlpd is not None else "-"
        print(f"{r.method} scenario={r.scenario} seed={r.seed} T={r.T_used} "
              f"rmse={r.rmse:.6g} nlpd={nl} runtime={r.runtime_seconds:.2f}s")
    print(f"{len(rows)} result rows" + (f" -> {args.out}" if args.out else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thingp",
                                     description="Fast GP approximations for autocorrelated "
                                                 "data via data thinning")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on per-block worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thin-select", help="choose the thinning number by the PACF rule")
    _add_data_flags(p)
    p.add_argument("--exclude-y", action="store_true", help="monitor covariates only")
    p.add_argument("--h-max", type=int, default=100)
    p.set_defaults(func=_cmd_thin_select)

    p = sub.add_parser("fit-sv", help="fit a (thinned) scaled-Vecchia model")
    _add_data_flags(p)
    p.add_argument("--thinned", action="store_true")
    p.add_argument("--include-time", action="store_true",
                   help="cascade the time index as an extra input column")
    p.add_argument("--T", type=int, default=None, help="override the thinning number")
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--kernel", choices=sorted(KERNEL_FLAGS), default="matern15")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--model", required=True, help="output model file")
    p.set_defaults(func=_cmd_fit_sv)

    p = sub.add_parser("predict-sv", help="predict with a fitted scaled-Vecchia model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="test CSV path")
    p.add_argument("--data", default=None, help="override the recorded training CSV path")
    p.add_argument("--mp", type=int, default=140)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--with-g", action="store_true", help="add the temporal residual component")
    p.add_argument("--g-window", type=int, default=None,
                   help="temporal window half-width (default: the model's T)")
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.set_defaults(func=_cmd_predict_sv)

    p = sub.add_parser("fit-twin", help="fit a (thinned) twin-style block ensemble")
    _add_data_flags(p)
    p.add_argument("--thinned", action="store_true")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--n-g", type=int, default=None, help="global support size (default: auto)")
    p.add_argument("--k-loc", type=int, default=50)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_fit_twin)

    p = sub.add_parser("predict-twin", help="predict with a fitted twin ensemble")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--with-g", action="store_true")
    p.add_argument("--g-window", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict_twin)

    p = sub.add_parser("predict-lagp", help="laGP-style local prediction (no persisted model)")
    _add_data_flags(p)
    p.add_argument("--test", required=True)
    p.add_argument("--thinned", action="store_true")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--n-start", type=int, default=6)
    p.add_argument("--n-end", type=int, default=30)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict_lagp)

    p = sub.add_parser("simulate", help="write robot-arm scenario CSVs")
    p.add_argument("--scenario", choices=bench.SCENARIOS, default="moderate")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench", help="run an experiment protocol")
    p.add_argument("--protocol", choices=("replication", "thinning-sweep", "stability"),
                   required=True)
    p.add_argument("--methods", default="", help="comma-separated method names")
    p.add_argument("--scenario", choices=bench.SCENARIOS, default="moderate")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--replications", type=int, default=3)
    p.add_argument("--seeds", default="1..10", help="stability seeds, e.g. 1..10 or 1,2,5")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--T-grid", default="", help="comma-separated T values for the sweep")
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--mp", type=int, default=140)
    p.add_argument("--n-start", type=int, default=6)
    p.add_argument("--n-end", type=int, default=30)
    p.add_argument("--kernel", choices=sorted(KERNEL_FLAGS), default="matern15")
    p.add_argument("--seed", type=int, default=1, help="method seed")
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--n-g", type=int, default=None)
    p.add_argument("--k-loc", type=int, default=50)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_bench)
    return parser


def run(argv) -> int:
    """Parse and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    parallel.set_max_workers(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"thingp: error: [config] {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"thingp: error: [data] {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"thingp: error: [numerical] {exc}", file=sys.stderr)
        return 4
    except ThinGPError as exc:
        print(f"thingp: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
