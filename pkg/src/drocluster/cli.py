"""Command-line entry point: ``drocluster <command> [options]``.

Every command accepts ``--config FILE`` (JSON object whose keys are option
names, dashes or underscores) and explicit flags, which take precedence.
Unknown config keys are rejected.  Outputs carry the config hash and seed.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import pandas as pd

from . import __version__
from .baselines import (
    LassoConfig,
    acc_cluster,
    cord_dissimilarity,
    kmedoids,
    lasso_cv,
    lasso_nodewise,
    one_minus_rho_squared,
)
from .clustering import SimilarityMatrix, ami, export_heatmap, spectral_cluster, symmetrize
from .datamodel import (
    Partition,
    generate_block_model,
    read_matrix_csv,
    read_panel_csv,
    save_block_model,
    write_json,
    write_matrix_csv,
    write_panel_csv,
)
from .delta import select_delta
from .exceptions import ConfigError, DroClusterError, NumericalError, ValidationError
from .portfolio import (
    ClusterStrategy,
    ReturnFilters,
    backtest,
    bundled_panel_path,
    load_returns,
)
from .solver import SolverOptions, admm_fit

logger = logging.getLogger("drocluster")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
METHODS = ("dro", "lasso", "acc", "kmedoids")


@dataclass(frozen=True)
class Opt:
    type: Callable
    default: Any = None
    help: str = ""
    required: bool = False
    output: bool = False


def _level(text):
    """A constant or a ``low,high`` range."""
    if isinstance(text, (int, float)):
        return float(text)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [float(v) for v in str(text).split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _factor_counts(text):
    if isinstance(text, int) or (isinstance(text, str) and text.isdigit()):
        return int(text)
    if isinstance(text, list):
        return [int(v) for v in text]
    if text == "random":
        return text
    return [int(v) for v in str(text).split(",")]


def _float_list(text):
    if isinstance(text, list):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",")]


def _str_list(text):
    if isinstance(text, list):
        return [str(v) for v in text]
    return [s for s in str(text).split(",") if s]


def _schedule(text):
    return int(text) if str(text).isdigit() else str(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes")


SOLVER = {
    "rho": Opt(float, 1.0, "ADMM penalty"),
    "tol_abs": Opt(float, 1e-6, "absolute residual tolerance"),
    "tol_rel": Opt(float, 1e-4, "relative residual tolerance"),
    "max_iter": Opt(int, 5000, "ADMM iteration cap"),
    "adaptive_rho": Opt(_bool, False, "residual-balancing penalty updates"),
}
DELTA = {
    "alpha": Opt(float, 0.05, "quantile level of the radius"),
    "draws": Opt(int, 1000, "Monte Carlo draws for the radius"),
    "upsilon": Opt(str, "wishart", "wishart or full"),
}
GENERATOR = {
    "K": Opt(int, 5, "number of clusters"),
    "d": Opt(int, 50, "number of variables"),
    "n": Opt(int, 100, "number of observations"),
    "noise_var": Opt(_level, 0.1, "noise variance, value or low,high"),
    "common_loading_sq": Opt(_level, 0.0, "hidden-factor loading squared, value or low,high"),
    "factor_counts": Opt(_factor_counts, "random", "'random', an int, or one int per cluster"),
}

SCHEMAS = {
    "simulate": {**GENERATOR,
                 "seed": Opt(int, required=True),
                 "out_dir": Opt(str, ".", output=True)},
    "fit-dro": {"panel": Opt(str, required=True, help="CSV panel (header row of ids)"),
                "delta": Opt(float, None, "radius; omitted means select it from data"),
                **DELTA, **SOLVER,
                "seed": Opt(int, None, "required when delta is omitted"),
                "trace": Opt(str, None, "per-iteration CSV path", output=True),
                "out_dir": Opt(str, ".", output=True)},
    "select-delta": {"panel": Opt(str, required=True), **DELTA,
                     "seed": Opt(int, required=True),
                     "out_dir": Opt(str, ".", output=True)},
    "cluster": {"similarity": Opt(str, None, "saved C matrix CSV"),
                "panel": Opt(str, None, "CSV panel for lasso/acc/kmedoids/dro"),
                "method": Opt(str, "spectral", "spectral (on a saved C), dro, lasso, acc, kmedoids"),
                "n_clusters": Opt(int, required=True),
                "delta": Opt(float, None), **DELTA, **SOLVER,
                "lam": Opt(float, None, "lasso penalty; omitted means cross-validate"),
                "cv_folds": Opt(int, 5),
                "seed": Opt(int, None),
                "heatmap": Opt(_bool, False, "also write C with diagonal 2 and orderings"),
                "out_dir": Opt(str, ".", output=True)},
    "evaluate": {"pred": Opt(str, required=True, help="partition JSON"),
                 "truth": Opt(str, required=True, help="partition or simulate truth JSON"),
                 "out_dir": Opt(str, ".", output=True)},
    "sim-study": {**GENERATOR,
                  "grid_param": Opt(str, "noise_var",
                                    "noise_var, common_loading_sq, or none (grid is a label)"),
                  "grid": Opt(_float_list, [0.1], "comma-separated grid values"),
                  "trials": Opt(int, 5),
                  "methods": Opt(_str_list, list(METHODS), "subset of dro,lasso,acc,kmedoids"),
                  **DELTA, **SOLVER,
                  "cv_folds": Opt(int, 5),
                  "jobs": Opt(int, 1, "worker processes (results do not depend on it)",
                              output=True),
                  "seed": Opt(int, required=True),
                  "out_dir": Opt(str, ".", output=True)},
    "backtest": {"returns": Opt(str, None, "CSV; omitted means the bundled synthetic panel"),
                 "input_kind": Opt(str, "price", "price or return"),
                 "schedule": Opt(_schedule, "annual", "annual, quarterly, monthly, daily or N"),
                 "anchor_month": Opt(int, 2),
                 "lookback": Opt(int, 500),
                 "min_history": Opt(int, 1260),
                 "max_missing": Opt(float, 0.05),
                 "K1": Opt(int, 6), "K2": Opt(int, 6),
                 "method": Opt(str, "dro-acc", "dro-acc, acc or kmedoids"),
                 "benchmark": Opt(str, None, "benchmark column, excluded from the universe"),
                 **DELTA,
                 "seed": Opt(int, required=True),
                 "out_dir": Opt(str, ".", output=True)},
}


# ------------------------------------------------------------------ config


def _load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(command, args):
    """Merge defaults, config file and explicit flags; validate the result."""
    schema = SCHEMAS[command]
    cfg = {}
    if args.config:
        raw = _load_config(args.config)
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        for key, value in raw.items():
            try:
                cfg[key] = schema[key].type(value) if value is not None else None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    resolved = {}
    for key, opt in schema.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in cfg:
            resolved[key] = cfg[key]
        else:
            resolved[key] = opt.default
        if opt.required and resolved[key] is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required for {command}")
    return resolved


def config_hash(command, cfg):
    """sha256 over the resolved non-output settings."""
    schema = SCHEMAS[command]
    payload = {k: v for k, v in cfg.items() if not schema[k].output}
    blob = json.dumps({"command": command, **payload}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _stamp(command, cfg):
    return {"command": command, "config_hash": config_hash(command, cfg),
            "seed": cfg.get("seed"), "version": __version__}


def _header(command, cfg):
    s = _stamp(command, cfg)
    return f"config_hash={s['config_hash']} seed={s['seed']} command={command}"


def _out(cfg, name):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    return os.path.join(cfg["out_dir"], name)


def _solver_opts(cfg):
    return SolverOptions(rho=cfg["rho"], tol_abs=cfg["tol_abs"], tol_rel=cfg["tol_rel"],
                         max_iter=cfg["max_iter"], adaptive_rho=cfg["adaptive_rho"])


def _partition_json(part, command, cfg, extra=None):
    data = {**_stamp(command, cfg), **part.to_dict()}
    data.update(extra or {})
    return data


# ---------------------------------------------------------------- commands


def run_simulate(cfg):
    panel, part, spec = generate_block_model(
        cfg["K"], cfg["d"], cfg["n"], factor_counts=cfg["factor_counts"],
        common_loading_sq=cfg["common_loading_sq"], noise_var=cfg["noise_var"],
        seed=cfg["seed"],
    )
    write_panel_csv(panel, _out(cfg, "panel.csv"), _header("simulate", cfg))
    save_block_model(spec, _out(cfg, "truth.json"), extra=_stamp("simulate", cfg))
    return {"panel": _out(cfg, "panel.csv"), "truth": _out(cfg, "truth.json")}


def _delta_for(panel, cfg, command):
    if cfg.get("delta") is not None:
        return cfg["delta"], None
    if cfg.get("seed") is None:
        raise ConfigError(f"{command} needs --seed when --delta is not given")
    est = select_delta(panel, cfg["alpha"], cfg["draws"], cfg["upsilon"], seed=cfg["seed"])
    return est.delta, est


def run_fit_dro(cfg):
    panel = read_panel_csv(cfg["panel"])
    delta, est = _delta_for(panel, cfg, "fit-dro")
    coef, state = admm_fit(panel, delta, _solver_opts(cfg))
    header = _header("fit-dro", cfg)
    write_matrix_csv(coef.values, _out(cfg, "B.csv"), header)
    write_matrix_csv(symmetrize(coef).values, _out(cfg, "C.csv"), header)
    summary = {**_stamp("fit-dro", cfg), "delta": delta,
               "delta_estimate": est.to_dict() if est else None,
               "converged": state.converged, "iterations": state.iteration,
               "objective": state.objective[-1] if state.objective else None,
               "primal_residual": state.primal_residual[-1],
               "dual_residual": state.dual_residual[-1],
               "column_ids": list(panel.column_ids)}
    write_json(summary, _out(cfg, "fit.json"))
    if cfg.get("trace"):
        trace = pd.DataFrame({
            "iteration": np.arange(1, state.iteration + 1),
            "primal_residual": state.primal_residual,
            "dual_residual": state.dual_residual,
            "objective": state.objective,
            "rho": state.rho_history,
        })
        with open(cfg["trace"], "w") as fh:
            fh.write(f"# {header}\n")
            trace.to_csv(fh, index=False, float_format="%.17g")
    return summary


def run_select_delta(cfg):
    panel = read_panel_csv(cfg["panel"])
    est = select_delta(panel, cfg["alpha"], cfg["draws"], cfg["upsilon"], seed=cfg["seed"])
    data = {**_stamp("select-delta", cfg), **est.to_dict()}
    write_json(data, _out(cfg, "delta.json"))
    return data


def run_cluster(cfg):
    method, K, seed = cfg["method"], cfg["n_clusters"], cfg["seed"]
    if seed is None and method != "acc":
        raise ConfigError(f"method {method} is stochastic; --seed is required")
    extra = {"method": method}
    C = None
    if method == "spectral":
        if not cfg["similarity"]:
            raise ConfigError("method spectral needs --similarity")
        C = SimilarityMatrix(read_matrix_csv(cfg["similarity"]))
        part = spectral_cluster(C, K, seed=seed)
    else:
        if not cfg["panel"]:
            raise ConfigError(f"method {method} needs --panel")
        panel = read_panel_csv(cfg["panel"])
        extra["column_ids"] = list(panel.column_ids)
        if method == "dro":
            delta, _ = _delta_for(panel, cfg, "cluster")
            coef, state = admm_fit(panel, delta, _solver_opts(cfg))
            C = symmetrize(coef)
            part = spectral_cluster(C, K, seed=seed)
            extra.update(delta=delta, converged=state.converged)
        elif method == "lasso":
            lam = cfg["lam"]
            if lam is None:
                lam = lasso_cv(panel, LassoConfig(cv_folds=cfg["cv_folds"], seed=seed))
            C = symmetrize(lasso_nodewise(panel, lam))
            part = spectral_cluster(C, K, seed=seed)
            extra["lam"] = lam
        elif method == "acc":
            part = acc_cluster(cord_dissimilarity(panel), K)
        elif method == "kmedoids":
            part = kmedoids(one_minus_rho_squared(panel), K, seed=seed)
        else:
            raise ConfigError(f"unknown method {method!r}")
    data = _partition_json(part, "cluster", cfg, extra)
    write_json(data, _out(cfg, "partition.json"))
    if cfg["heatmap"] and C is not None:
        export_heatmap(C, _out(cfg, "heatmap.csv"), {"fitted": part},
                       extra.get("column_ids"))
    return data


def _read_partition(path):
    with open(path) as fh:
        data = json.load(fh)
    if "partition" in data:
        data = data["partition"]
    return Partition.from_dict(data)


def run_evaluate(cfg):
    pred, truth = _read_partition(cfg["pred"]), _read_partition(cfg["truth"])
    data = {**_stamp("evaluate", cfg), "ami": ami(pred, truth)}
    write_json(data, _out(cfg, "evaluation.json"))
    return data


def trial_seed(master, grid_index, trial):
    """Per-trial integer seed, independent of execution order."""
    ss = np.random.SeedSequence([master, grid_index, trial])
    return int(ss.generate_state(1)[0])


def _one_trial(job):
    cfg, gi, value, trial = job
    seed = trial_seed(cfg["seed"], gi, trial)
    gen = {k: cfg[k] for k in ("noise_var", "common_loading_sq")}
    if cfg["grid_param"] != "none":
        gen[cfg["grid_param"]] = value
    rows = []
    try:
        panel, truth, _ = generate_block_model(cfg["K"], cfg["d"], cfg["n"],
                                               factor_counts=cfg["factor_counts"],
                                               seed=seed, **gen)
    except DroClusterError as exc:
        return [dict(method=m, grid_param=cfg["grid_param"], grid_value=value, trial=trial,
                     seed=seed, ami=np.nan, error=f"{type(exc).__name__}: {exc}")
                for m in cfg["methods"]]
    sub = np.random.default_rng(seed)
    s_delta, s_km, s_cv = (int(v) for v in sub.integers(2**31 - 1, size=3))
    for method in cfg["methods"]:
        row = dict(method=method, grid_param=cfg["grid_param"], grid_value=value,
                   trial=trial, seed=seed, ami=np.nan, error="")
        try:
            if method == "dro":
                est = select_delta(panel, cfg["alpha"], cfg["draws"], cfg["upsilon"],
                                   seed=s_delta)
                coef, _ = admm_fit(panel, est.delta, _solver_opts(cfg))
                part = spectral_cluster(symmetrize(coef), cfg["K"], seed=s_km)
            elif method == "lasso":
                lam = lasso_cv(panel, LassoConfig(cv_folds=cfg["cv_folds"], seed=s_cv))
                part = spectral_cluster(symmetrize(lasso_nodewise(panel, lam)), cfg["K"],
                                        seed=s_km)
            elif method == "acc":
                part = acc_cluster(cord_dissimilarity(panel), cfg["K"])
            elif method == "kmedoids":
                part = kmedoids(one_minus_rho_squared(panel), cfg["K"])
            else:
                raise ConfigError(f"unknown method {method!r}")
            row["ami"] = ami(part, truth)
        except DroClusterError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def run_sim_study(cfg):
    unknown = set(cfg["methods"]) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods: {sorted(unknown)}")
    if cfg["grid_param"] not in ("noise_var", "common_loading_sq", "none"):
        raise ConfigError("grid_param must be noise_var, common_loading_sq or none")
    jobs = [(cfg, gi, float(v), t) for gi, v in enumerate(cfg["grid"])
            for t in range(cfg["trials"])]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_one_trial, jobs))
    else:
        results = [_one_trial(j) for j in jobs]
    long = pd.DataFrame([r for rows in results for r in rows])
    summary = (long.groupby(["method", "grid_value"], sort=True)
               .agg(mean_ami=("ami", "mean"), std_ami=("ami", "std"),
                    trials=("ami", "count"),
                    failures=("error", lambda e: int((e != "").sum())))
               .reset_index())
    header = _header("sim-study", cfg)
    for name, frame in (("results_long.csv", long), ("results_summary.csv", summary)):
        with open(_out(cfg, name), "w") as fh:
            fh.write(f"# {header}\n")
            frame.to_csv(fh, index=False, float_format="%.10g")
    return {"long": _out(cfg, "results_long.csv"),
            "summary": _out(cfg, "results_summary.csv"),
            "failures": int((long["error"] != "").sum())}


def run_backtest(cfg):
    path = cfg["returns"] or str(bundled_panel_path())
    panel = load_returns(path, cfg["input_kind"])
    filters = ReturnFilters(min_history=cfg["min_history"], max_missing=cfg["max_missing"],
                            lookback=cfg["lookback"])
    strategy = ClusterStrategy(K1=cfg["K1"], K2=cfg["K2"], method=cfg["method"],
                               alpha=cfg["alpha"], M=cfg["draws"],
                               delta_method=cfg["upsilon"], seed=cfg["seed"])
    ledger, metrics = backtest(panel, strategy, schedule=cfg["schedule"],
                               anchor_month=cfg["anchor_month"], filters=filters,
                               benchmark=cfg["benchmark"])
    header = _header("backtest", cfg)
    with open(_out(cfg, "ledger.csv"), "w") as fh:
        fh.write(f"# {header}\n")
        ledger.to_frame().to_csv(fh, float_format="%.17g", date_format="%Y-%m-%d")
    write_json({**_stamp("backtest", cfg), **metrics.to_dict()}, _out(cfg, "metrics.json"))
    rebal = [{"date": str(r.date.date()), "tickers": list(r.tickers),
              "weights": r.weights.tolist(),
              "info": {k: v for k, v in r.info.items() if k != "labels"}}
             for r in ledger.rebalances]
    write_json({**_stamp("backtest", cfg), "rebalances": rebal}, _out(cfg, "rebalances.json"))
    return metrics.to_dict()


RUNNERS = {
    "simulate": run_simulate,
    "fit-dro": run_fit_dro,
    "select-delta": run_select_delta,
    "cluster": run_cluster,
    "evaluate": run_evaluate,
    "sim-study": run_sim_study,
    "backtest": run_backtest,
}


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="drocluster", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=RUNNERS[name].__doc__)
        p.add_argument("--config", help="JSON config file")
        for key, opt in schema.items():
            help_text = opt.help
            if opt.default is not None:
                help_text = f"{help_text} (default {opt.default})".strip()
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=opt.type,
                           default=None, help=help_text)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        result = RUNNERS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(result, indent=2, default=str, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
