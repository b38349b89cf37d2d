"""
bias-oracle command
Evaluates the large-sample 2SLS bias of a simulation design
"""

import logging

import config
from estimation.exceptions import ConfigError
from estimation.models import SCALE_FORMS, McConfig
from estimation.services.baseline import bias_oracle_2sls, fit_2sls
from estimation.services.simulation import simulate_dgp
from utils.file_handler import format_table, report_json, write_report
from utils.random_streams import resolve_seed

logger = logging.getLogger(__name__)

DEFAULTS = {
    "lam": 1.0,
    "gamma1": 0.0,
    "delta1": 0.0,
    "delta2": 0.0,
    "delta3": 1.0,
    "gamma2": 1.0,
    "pi1": 1.0,
    "pi2": 1.0,
    "scale_form": "variance",
    "draws": config.DEFAULT_ORACLE_DRAWS,
    "compare_n": None,
    "seed": config.DEFAULT_SEED,
    "workers": config.DEFAULT_WORKERS,
    "out": None,
    "format": "markdown",
}


def register(subparsers, common):
    parser = subparsers.add_parser("bias-oracle", parents=[common], help="probability-limit bias of 2SLS")
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--gamma1", type=float, default=None)
    parser.add_argument("--delta1", type=float, default=None)
    parser.add_argument("--delta2", type=float, default=None)
    parser.add_argument("--delta3", type=float, default=None)
    parser.add_argument("--gamma2", type=float, default=None)
    parser.add_argument("--pi1", type=float, default=None)
    parser.add_argument("--pi2", type=float, default=None)
    parser.add_argument("--scale-form", choices=SCALE_FORMS, default=None)
    parser.add_argument("--draws", type=int, default=None, help="Monte Carlo integration draws")
    parser.add_argument("--compare-n", type=int, default=None, metavar="N",
                        help="also fit 2SLS on one simulated sample of size N")
    parser.set_defaults(handler=cmd_bias_oracle)


def cmd_bias_oracle(args) -> int:
    """Handle `bias-oracle`"""
    from estimation.cli import merge_options

    options = merge_options(args, DEFAULTS)
    if int(options["draws"]) < config.MIN_ORACLE_DRAWS:
        raise ConfigError(f"--draws must be at least {config.MIN_ORACLE_DRAWS}, got {options['draws']}")
    seed = resolve_seed(options["seed"])
    dgp = McConfig(
        n=int(options["compare_n"] or 1000),
        replications=1,
        lam=float(options["lam"]),
        gamma1=float(options["gamma1"]),
        delta1=float(options["delta1"]),
        delta2=float(options["delta2"]),
        delta3=float(options["delta3"]),
        gamma2=float(options["gamma2"]),
        pi1=float(options["pi1"]),
        pi2=float(options["pi2"]),
        seed=seed,
        scale_form=options["scale_form"],
    )
    result = bias_oracle_2sls(dgp, draws=int(options["draws"]), seed=seed, workers=int(options["workers"]),
                              progress=getattr(args, "progress", False))

    diagnostics = {
        "sigma_h": result.sigma_h,
        "cross_moment": result.cross_moment,
        "mc_draws": result.mc_draws,
        "mc_standard_error": result.mc_standard_error,
    }
    if options["compare_n"]:
        fit = fit_2sls(simulate_dgp(dgp, 0))
        diagnostics["sample_n"] = dgp.n
        diagnostics["sample_bias"] = fit.alpha1 - dgp.alpha1
        diagnostics["sample_se"] = fit.se[0]

    fmt = options["format"]
    if fmt == "json":
        content = report_json("bias-oracle", estimate=result.bias, diagnostics=diagnostics, seed=seed,
                              design=dgp.to_dict())
    else:
        content = format_table([{"bias": result.bias, **diagnostics}], fmt, floatfmt=".5g")
    write_report(content, options["out"])
    return 0
