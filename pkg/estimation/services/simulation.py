"""
Monte Carlo engine
Simulates the heteroskedastic IV design and tabulates bias, variance, mean
estimated variance and 95% coverage of OLS, 2SLS, CF1 and CF2.

Design:
    Z ~ |N(0,1)|, X = 1, U, V ~ N(0,1) independent
    D = pi1 Z + pi2 X + h(Z) V
    Y = alpha1 D + alpha2 X + (delta1 D + delta2 D^2 + delta3 X)(U + lam V)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Tuple

import numpy as np
from tqdm.auto import tqdm

import config
from estimation.exceptions import ConfigError, EstimationError
from estimation.models import (
    MC_ESTIMATORS,
    CfModel,
    Dataset,
    EstimatorSummary,
    McConfig,
    McResult,
    TableConfig,
)
from estimation.services.baseline import fit_2sls, fit_ols
from estimation.services.control_function import fit_cf
from estimation.services.inference import critical_value
from utils.random_streams import TAG_U, TAG_V, TAG_Z, substream

logger = logging.getLogger(__name__)

# CF estimators fit h^2 by regressing V~^2 on (1, |Z|)
MC_CF_SKEDASTIC = "linear"


def draw_primitives(size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z = |N(0,1)|, V and U standard normal, drawn in that order from one generator"""
    z = np.abs(rng.standard_normal(size))
    v = rng.standard_normal(size)
    u = rng.standard_normal(size)
    return z, v, u


def first_stage_scale(dgp: McConfig, z) -> np.ndarray:
    """h(Z, X) with X = 1"""
    index = dgp.gamma1 * np.asarray(z) + dgp.gamma2
    if dgp.scale_form == "variance":
        return np.sqrt(np.maximum(index, 0.0))
    return index


def structural_scale(dgp: McConfig, d) -> np.ndarray:
    """g(D, X) = delta1 D + delta2 D^2 + delta3 X with X = 1"""
    d = np.asarray(d)
    return dgp.delta1 * d + dgp.delta2 * d ** 2 + dgp.delta3


def simulate_dgp(dgp: McConfig, rep_index: int) -> Dataset:
    """
    One sample of size dgp.n

    Z, V and U come from separate substreams keyed by (seed, rep_index, tag),
    so designs sharing a seed share their primitive draws.
    """
    n = dgp.n
    z = np.abs(substream(dgp.seed, rep_index, TAG_Z).standard_normal(n))
    v = substream(dgp.seed, rep_index, TAG_V).standard_normal(n)
    u = substream(dgp.seed, rep_index, TAG_U).standard_normal(n)
    d = dgp.pi1 * z + dgp.pi2 + first_stage_scale(dgp, z) * v
    y = dgp.alpha1 * d + dgp.alpha2 + structural_scale(dgp, d) * (u + dgp.lam * v)
    return Dataset.from_arrays(y=y, d=d, z=z)


def _estimate(name: str, data: Dataset):
    """(alpha1-hat, estimated variance, naive estimated variance, floored count)"""
    if name == "ols":
        fit = fit_ols(data)
        return fit.alpha1, fit.hc_variance[0, 0], float("nan"), 0
    if name == "2sls":
        fit = fit_2sls(data)
        return fit.alpha1, fit.hc_variance[0, 0], float("nan"), 0
    cf = fit_cf(data, CfModel.from_name(name, skedastic=MC_CF_SKEDASTIC))
    n = data.n
    return cf.alpha1, cf.omega[0, 0] / n, cf.omega_naive[0, 0] / n, cf.first_stage.skedastic.n_floored


def _replication(dgp: McConfig, rep_index: int, estimators: Tuple[str, ...]):
    data = simulate_dgp(dgp, rep_index)
    outcome = {}
    for name in estimators:
        try:
            outcome[name] = _estimate(name, data)
        except EstimationError as e:
            logger.warning(f"Replication {rep_index}: {name} failed ({e})")
            outcome[name] = None
    return outcome


def _summarize(name: str, rows: List[tuple], failures: int, alpha1: float, crit: float) -> EstimatorSummary:
    if not rows:
        nan = float("nan")
        return EstimatorSummary(name=name, bias=nan, variance=nan, mean_est_variance=nan, coverage95=nan,
                                successes=0, failures=failures)
    values = np.asarray([r[:3] for r in rows], dtype=np.float64)
    estimates, est_var, est_var_naive = values[:, 0], values[:, 1], values[:, 2]
    miss = np.abs(estimates - alpha1)
    coverage_naive = float("nan")
    if np.all(np.isfinite(est_var_naive)):
        coverage_naive = float(np.mean(miss <= crit * np.sqrt(est_var_naive)))
    return EstimatorSummary(
        name=name,
        bias=float(estimates.mean() - alpha1),
        variance=float(estimates.var(ddof=1)) if len(rows) > 1 else 0.0,
        mean_est_variance=float(est_var.mean()),
        coverage95=float(np.mean(miss <= crit * np.sqrt(est_var))),
        mean_est_variance_naive=float(est_var_naive.mean()),
        median_est_variance=float(np.median(est_var)),
        coverage95_naive=coverage_naive,
        successes=len(rows),
        failures=failures,
    )


def run_mc(dgp: McConfig, estimators: Iterable[str] = MC_ESTIMATORS, workers: int = 1,
           progress: bool = False) -> McResult:
    """
    Monte Carlo moments of alpha1-hat for each estimator

    Replications run on a thread pool and are aggregated in replication order,
    so the result is bitwise identical for any worker count. Replications
    where an estimator raises an estimation error are excluded from that
    estimator's moments and counted.

    Returns:
        McResult with bias, MC variance, mean of the estimated variance
        Omega_11 / n and Gaussian 95% coverage per estimator
    """
    estimators = tuple(estimators)
    unknown = set(estimators) - set(MC_ESTIMATORS)
    if unknown:
        raise ConfigError(f"unknown estimators: {', '.join(sorted(unknown))}")

    def task(rep_index):
        return _replication(dgp, rep_index, estimators)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(tqdm(pool.map(task, range(dgp.replications)), total=dgp.replications,
                             desc=f"n={dgp.n} d1={dgp.delta1} d2={dgp.delta2}", disable=not progress))

    crit = critical_value()
    summaries: Dict[str, EstimatorSummary] = {}
    failures: Dict[str, int] = {}
    floored = 0
    for name in estimators:
        rows = [o[name] for o in outcomes if o[name] is not None]
        failures[name] = len(outcomes) - len(rows)
        floored += sum(r[3] for r in rows)
        summaries[name] = _summarize(name, rows, failures[name], dgp.alpha1, crit)
        if failures[name]:
            logger.warning(f"{name}: {failures[name]} of {dgp.replications} replications failed")

    return McResult(config=dgp, estimators=summaries, failures=failures, floored_observations=floored)


def run_table(table: TableConfig, workers: int = 1, progress: bool = False) -> List[McResult]:
    """Run every cell of a table design in table order"""
    results = []
    for dgp in table.cells():
        logger.info(f"{table.name}: n={dgp.n}, delta1={dgp.delta1}, delta2={dgp.delta2} "
                    f"({dgp.replications} replications)")
        results.append(run_mc(dgp, table.estimators, workers=workers, progress=progress))
    return results


def table_rows(results: Iterable[McResult], diagnostics: bool = False) -> List[dict]:
    """
    One row per design: n, delta1, delta2, then Bias / Var / Est.Var / Cov95
    for each estimator (plus naive, median and failure columns with diagnostics)
    """
    rows = []
    for result in results:
        dgp = result.config
        row = {"n": dgp.n, "delta1": dgp.delta1, "delta2": dgp.delta2}
        for name, s in result.estimators.items():
            row[f"{name}_bias"] = s.bias
            row[f"{name}_var"] = s.variance
            row[f"{name}_est_var"] = s.mean_est_variance
            row[f"{name}_cov95"] = s.coverage95
            if diagnostics:
                row[f"{name}_est_var_naive"] = s.mean_est_variance_naive
                row[f"{name}_est_var_median"] = s.median_est_variance
                row[f"{name}_cov95_naive"] = s.coverage95_naive
                row[f"{name}_failures"] = s.failures
        if diagnostics:
            row["floored_observations"] = result.floored_observations
        rows.append(row)
    return rows
