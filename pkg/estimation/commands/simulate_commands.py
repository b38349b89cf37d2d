"""
simulate command
Runs the Monte Carlo table designs and writes CSV / Markdown / JSON tables
"""

import logging
from dataclasses import replace

import config
from estimation.exceptions import ConfigError
from estimation.models import MC_ESTIMATORS, SCALE_FORMS, TableConfig
from estimation.services.simulation import run_table, simulate_dgp, table_rows
from utils.file_handler import format_table, report_json, split_list, write_dataset, write_report
from utils.random_streams import resolve_seed

logger = logging.getLogger(__name__)

DEFAULTS = {
    "preset": None,
    "lam": None,
    "gamma1": None,
    "n": None,
    "n_grid": None,
    "delta1_grid": None,
    "delta2_grid": None,
    "replications": None,
    "estimators": None,
    "scale_form": None,
    "emit_csv": None,
    "diagnostics": False,
    "seed": config.DEFAULT_SEED,
    "workers": config.DEFAULT_WORKERS,
    "out": None,
    "format": "csv",
}


def register(subparsers, common):
    parser = subparsers.add_parser("simulate", parents=[common], help="run Monte Carlo table designs")
    parser.add_argument("--preset", help="table1, table2, table3 or table4")
    parser.add_argument("--lambda", dest="lam", type=float, default=None, help="endogeneity strength")
    parser.add_argument("--gamma1", type=float, default=None, help="first-stage heteroskedasticity")
    parser.add_argument("--n", type=int, default=None, help="single sample size (replaces the n grid)")
    parser.add_argument("--n-grid", default=None, help="sample sizes, comma separated")
    parser.add_argument("--delta1-grid", default=None, help="delta1 values, comma separated")
    parser.add_argument("--delta2-grid", default=None, help="delta2 values, comma separated")
    parser.add_argument("--replications", type=int, default=None)
    parser.add_argument("--estimators", default=None, help=f"subset of {','.join(MC_ESTIMATORS)}")
    parser.add_argument("--scale-form", choices=SCALE_FORMS, default=None,
                        help="first-stage scale enters as a variance (default) or a level")
    parser.add_argument("--emit-csv", default=None, metavar="PATH",
                        help="write replication 0 of the first design to PATH and exit")
    parser.add_argument("--diagnostics", action="store_true", default=None,
                        help="add naive / median variance, failure and floor columns")
    parser.set_defaults(handler=cmd_simulate)


def _numbers(value, cast):
    try:
        return tuple(cast(v) for v in split_list(value))
    except ValueError:
        raise ConfigError(f"cannot parse number list '{value}'")


def table_config_from_options(options: dict) -> TableConfig:
    """Preset (if any) with explicit options layered on top"""
    if options["preset"]:
        presets = TableConfig.load_presets()
        if options["preset"] not in presets:
            raise ConfigError(f"unknown preset '{options['preset']}' (choose from {', '.join(presets)})")
        table = presets[options["preset"]]
    else:
        table = TableConfig(name="custom")

    overrides = {}
    if options["lam"] is not None:
        overrides["lam"] = float(options["lam"])
    if options["gamma1"] is not None:
        overrides["gamma1"] = float(options["gamma1"])
    if options["n_grid"] is not None:
        overrides["n_grid"] = _numbers(options["n_grid"], int)
    if options["n"] is not None:
        overrides["n_grid"] = (int(options["n"]),)
    if options["delta1_grid"] is not None:
        overrides["delta1_grid"] = _numbers(options["delta1_grid"], float)
    if options["delta2_grid"] is not None:
        overrides["delta2_grid"] = _numbers(options["delta2_grid"], float)
    if options["replications"] is not None:
        overrides["replications"] = int(options["replications"])
    if options["estimators"] is not None:
        overrides["estimators"] = split_list(options["estimators"])
    if options["scale_form"] is not None:
        overrides["scale_form"] = options["scale_form"]
    overrides["seed"] = resolve_seed(options["seed"])
    return replace(table, **overrides)


def cmd_simulate(args) -> int:
    """Handle `simulate`"""
    from estimation.cli import merge_options

    options = merge_options(args, DEFAULTS)
    table = table_config_from_options(options)
    cells = table.cells()
    if not cells:
        raise ConfigError("the design grid is empty")

    if options["emit_csv"]:
        write_dataset(simulate_dgp(cells[0], 0), options["emit_csv"])
        return 0

    logger.info(f"Running {table.name}: {len(cells)} designs x {table.replications} replications "
                f"(seed {table.seed}, {options['workers']} workers)")
    results = run_table(table, workers=int(options["workers"]), progress=getattr(args, "progress", False))
    rows = table_rows(results, diagnostics=bool(options["diagnostics"]))

    fmt = options["format"]
    if fmt == "json":
        content = report_json("simulate", diagnostics={"designs": len(rows)}, seed=table.seed,
                              design=table.to_dict(), table=rows)
    else:
        content = format_table(rows, fmt)
    write_report(content, options["out"])
    return 0
