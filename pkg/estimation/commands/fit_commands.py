"""
fit command
Fits OLS, 2SLS or the control-function estimator to a CSV dataset
"""

import logging

import numpy as np
from tabulate import tabulate

import config
from estimation.exceptions import ConfigError, EstimationError
from estimation.models import GRID_PRESETS, CfModel, Dataset, FitConfig, SkedasticFamily
from estimation.services.baseline import fit_2sls, fit_ols
from estimation.services.control_function import fit_cf, wald_test
from estimation.services.inference import bootstrap, bootstrap_statistic, coefficient_table
from utils.file_handler import format_table, read_dataset, report_json, split_list, write_report
from utils.random_streams import resolve_seed

logger = logging.getLogger(__name__)

DEFAULTS = {
    "csv": None,
    "y": None,
    "d": None,
    "x": None,
    "z": None,
    "estimator": "cf",
    "cf_terms": "cf1",
    "skedastic": "linear",
    "bootstrap": 0,
    "grid": False,
    "seed": config.DEFAULT_SEED,
    "workers": config.DEFAULT_WORKERS,
    "out": None,
    "format": "markdown",
}


def register(subparsers, common):
    parser = subparsers.add_parser("fit", parents=[common], help="fit a model to a CSV dataset")
    parser.add_argument("--csv", help="input CSV file (UTF-8, header row)")
    parser.add_argument("--y", help="response column")
    parser.add_argument("--d", help="endogenous regressor column")
    parser.add_argument("--x", help="exogenous columns, comma separated (a constant is added)")
    parser.add_argument("--z", help="instrument columns, comma separated")
    parser.add_argument("--estimator", choices=("ols", "2sls", "cf"), default=None)
    parser.add_argument("--cf-terms", default=None, help="preset (cf1, cf2, v, v+v2, ...) or list such as v,vd,v2")
    parser.add_argument("--skedastic", choices=[f.value for f in SkedasticFamily], default=None)
    parser.add_argument("--bootstrap", type=int, default=None, metavar="B", help="pairs-bootstrap replicates")
    parser.add_argument("--grid", action="store_true", default=None,
                        help="fit every skedastic family x term set, plus OLS and 2SLS")
    parser.set_defaults(handler=cmd_fit)


def fit_config_from_options(options: dict) -> FitConfig:
    return FitConfig(
        csv_path=options["csv"] or "",
        y=options["y"] or "",
        d=options["d"] or "",
        x=split_list(options["x"]),
        z=split_list(options["z"]),
        estimator=str(options["estimator"]).lower(),
        cf_terms=str(options["cf_terms"]),
        skedastic=str(options["skedastic"]).lower(),
        bootstrap=int(options["bootstrap"]),
        seed=options["seed"],
        workers=int(options["workers"]),
        grid=bool(options["grid"]),
    )


def _baseline_statistic(estimator):
    fit = fit_ols if estimator == "ols" else fit_2sls
    return lambda sample: fit(sample).coefficients


def fit_model(data: Dataset, estimator: str, cf_terms: str = "cf1", skedastic: str = "linear",
              bootstrap_b: int = 0, seed=None, workers: int = 1, progress: bool = False) -> dict:
    """
    Fit one estimator and collect everything a report needs

    Returns:
        dict with labels, estimates, analytic (and bootstrap) standard errors,
        percentile intervals and diagnostics
    """
    boot = None
    diagnostics = {"n": data.n}
    if estimator in ("ols", "2sls"):
        fit = fit_ols(data) if estimator == "ols" else fit_2sls(data)
        labels, estimates, se = fit.labels, fit.coefficients, fit.se
        if fit.first_stage_f is not None:
            diagnostics["first_stage_f"] = fit.first_stage_f
        model_name = estimator
        if bootstrap_b:
            boot = bootstrap_statistic(data, _baseline_statistic(estimator), B=bootstrap_b, seed=seed,
                                       workers=workers, progress=progress)
    elif estimator == "cf":
        model = CfModel.from_name(cf_terms, skedastic=skedastic)
        fit = fit_cf(data, model)
        labels, estimates, se = fit.labels, fit.alpha, fit.se
        sked = fit.first_stage.skedastic
        diagnostics.update({
            "first_stage_f": fit.first_stage.f_statistic,
            "floored_observations": sked.n_floored,
            "skedastic_converged": sked.converged,
            "skedastic_iterations": sked.nls_iterations,
            "se_naive": fit.se_naive[0],
        })
        if sked.gamma.size:
            labels_gamma = model.skedastic_spec.feature_labels(data)
            diagnostics["skedastic_gamma"] = {lab: float(g) for lab, g in zip(labels_gamma, sked.gamma)}
        if model.terms:
            wald = wald_test(fit)
            diagnostics["wald_cf"] = {"statistic": wald.statistic, "df": wald.df, "p_value": wald.p_value}
        model_name = f"{model.name} ({model.skedastic_spec.name})"
        if bootstrap_b:
            boot = bootstrap(data, model, B=bootstrap_b, seed=seed, workers=workers, progress=progress)
    else:
        raise ConfigError(f"unknown estimator '{estimator}'")

    if boot is not None:
        diagnostics["bootstrap_failed"] = boot.failed_replicates
        diagnostics["bootstrap_effective"] = boot.b_effective
    return {
        "model": model_name,
        "labels": labels,
        "estimates": np.asarray(estimates),
        "se": np.asarray(se),
        "bootstrap": boot,
        "diagnostics": diagnostics,
    }


def _render_single(result: dict, fmt: str, seed, dropped: int) -> str:
    rows = coefficient_table(result["labels"], result["estimates"], result["se"], result["bootstrap"])
    diagnostics = dict(result["diagnostics"], dropped_rows=dropped)
    boot = result["bootstrap"]
    if fmt == "json":
        return report_json(
            "fit",
            estimate=result["estimates"][0],
            se_analytic=result["se"][0],
            se_bootstrap=None if boot is None else boot.se[0],
            ci=None if boot is None else boot.ci_percentile[0],
            diagnostics=diagnostics,
            seed=seed,
            model=result["model"],
            coefficients=rows,
        )
    if fmt == "csv":
        return format_table(rows, "csv")

    table_rows = [{k: v for k, v in row.items() if k != "z"} for row in rows]
    lines = [f"Model: {result['model']}", ""]
    lines.append(tabulate(table_rows, headers="keys", tablefmt="github", floatfmt=".4f"))
    lines.append("")
    for key, value in diagnostics.items():
        if isinstance(value, dict):
            value = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in value.items())
        elif isinstance(value, float):
            value = f"{value:.4g}"
        lines.append(f"{key}: {value}")
    if seed is not None:
        lines.append(f"seed: {seed}")
    return "\n".join(lines) + "\n"


def fit_grid(data: Dataset, bootstrap_b: int = 0, seed=None, workers: int = 1, progress: bool = False):
    """Every skedastic family x term preset, plus OLS and 2SLS; failed cells are reported as NaN"""
    entries = []
    specs = [("ols", "-", "-"), ("2sls", "-", "-")]
    specs += [("cf", terms, family.value) for terms in GRID_PRESETS for family in SkedasticFamily]
    for estimator, terms, family in specs:
        entry = {"estimator": estimator, "cf_terms": terms, "skedastic": family}
        try:
            result = fit_model(data, estimator, terms, family, bootstrap_b, seed, workers, progress)
        except EstimationError as e:
            logger.warning(f"Grid cell {estimator} {terms} {family} failed: {e}")
            nan = float("nan")
            entry.update(estimate=nan, se=nan, se_bootstrap=nan, ci_low=nan, ci_high=nan)
            entries.append(entry)
            continue
        boot = result["bootstrap"]
        entry.update(
            estimate=float(result["estimates"][0]),
            se=float(result["se"][0]),
            se_bootstrap=float("nan") if boot is None else float(boot.se[0]),
            ci_low=float("nan") if boot is None else float(boot.ci_percentile[0, 0]),
            ci_high=float("nan") if boot is None else float(boot.ci_percentile[0, 1]),
        )
        entries.append(entry)
    return entries


def _render_grid(entries, fmt: str, seed, dropped: int, n: int) -> str:
    if fmt == "json":
        return report_json("fit", diagnostics={"n": n, "dropped_rows": dropped}, seed=seed, grid=entries)
    if fmt == "csv":
        return format_table(entries, "csv")

    families = [f.value for f in SkedasticFamily]
    table = []
    for entry in entries:
        if entry["estimator"] != "cf":
            cell = f"{entry['estimate']:.4f} ({entry['se']:.4f})"
            table.append({"model": entry["estimator"].upper(), **{fam: cell for fam in families}})
    for terms in GRID_PRESETS:
        row = {"model": terms}
        for entry in entries:
            if entry["estimator"] == "cf" and entry["cf_terms"] == terms:
                row[entry["skedastic"]] = f"{entry['estimate']:.4f} ({entry['se']:.4f})"
        table.append(row)
    return tabulate(table, headers="keys", tablefmt="github") + "\n"


def cmd_fit(args) -> int:
    """Handle `fit`"""
    from estimation.cli import merge_options

    options = merge_options(args, DEFAULTS)
    fit_config = fit_config_from_options(options)
    fmt = options["format"]
    data, dropped = read_dataset(fit_config.csv_path, fit_config.y, fit_config.d, fit_config.x, fit_config.z)
    seed = resolve_seed(fit_config.seed) if fit_config.bootstrap else fit_config.seed
    progress = getattr(args, "progress", False)

    if fit_config.grid:
        entries = fit_grid(data, fit_config.bootstrap, seed, fit_config.workers, progress)
        write_report(_render_grid(entries, fmt, seed, dropped, data.n), options["out"])
        return 0

    result = fit_model(data, fit_config.estimator, fit_config.cf_terms, fit_config.skedastic,
                       fit_config.bootstrap, seed, fit_config.workers, progress)
    logger.info(f"{result['model']}: alpha1 = {result['estimates'][0]:.6g} (se {result['se'][0]:.4g})")
    write_report(_render_single(result, fmt, seed, dropped), options["out"])
    return 0
