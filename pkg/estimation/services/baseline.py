"""
Baseline estimators
OLS and 2SLS for Y = D*a1 + X'a2 + g(D,X)*eps, plus the Monte Carlo oracle for
the probability-limit bias of 2SLS under endogenous heteroskedasticity
"""

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm.auto import tqdm

import config
from estimation.exceptions import (
    DegenerateInstrument,
    RankDeficient,
    WeakInstrumentWarning,
)
from estimation.models import BiasOracleResult, Dataset, DesignMatrix, LinearFit, McConfig
from estimation.services.linalg import checked_inverse, hc0_covariance, ols_solve, residualize
from utils.random_streams import TAG_ORACLE, substream

logger = logging.getLogger(__name__)


def _structural_design(data: Dataset) -> DesignMatrix:
    return DesignMatrix(np.column_stack([data.d, data.x]), (data.d_label,) + data.x_labels)


def fit_ols(data: Dataset) -> LinearFit:
    """
    OLS of Y on (D, X) with HC0 sandwich variance

    Raises:
        RankDeficient: when (D, X) is collinear
    """
    design = _structural_design(data)
    proj = ols_solve(design, data.y)
    return LinearFit(
        estimator="ols",
        alpha1=float(proj.coefficients[0]),
        alpha2=proj.coefficients[1:],
        residuals=proj.residuals,
        hc_variance=hc0_covariance(design, proj.residuals),
        labels=design.column_labels,
    )


def first_stage_f(data: Dataset) -> float:
    """Homoskedastic F statistic for the excluded instruments"""
    unrestricted = ols_solve(np.column_stack([data.z, data.x]), data.d)
    restricted = ols_solve(data.x, data.d)
    ssr_u = float(unrestricted.residuals @ unrestricted.residuals)
    ssr_r = float(restricted.residuals @ restricted.residuals)
    df = data.n - data.p_z - data.p_x
    if df <= 0 or ssr_u <= 0.0:
        return float("inf")
    return ((ssr_r - ssr_u) / data.p_z) / (ssr_u / df)


def fit_2sls(data: Dataset) -> LinearFit:
    """
    Two-stage least squares via the projection form

    a1 = (D' P D)^-1 D' P Y with P the projection on Z residualized against X,
    then a2 from OLS of (Y - D a1) on X.

    Raises:
        RankDeficient: when the instrument or exogenous block is collinear
    """
    z_bar = residualize(data.z, data.x)
    d_hat = ols_solve(z_bar, data.d).fitted
    denominator = float(d_hat @ data.d)
    if abs(denominator) <= config.RANK_TOLERANCE * float(data.d @ data.d):
        raise RankDeficient(0, float("inf"), columns=1)
    alpha1 = float(d_hat @ data.y) / denominator
    alpha2 = ols_solve(data.x, data.y - alpha1 * data.d).coefficients
    residuals = data.y - alpha1 * data.d - data.x @ alpha2

    f_stat = first_stage_f(data)
    if f_stat < config.WEAK_INSTRUMENT_F:
        logger.warning(f"Weak first stage: F = {f_stat:.2f}")
        warnings.warn(f"first-stage F statistic {f_stat:.2f} below {config.WEAK_INSTRUMENT_F}",
                      WeakInstrumentWarning, stacklevel=2)

    # robust IV sandwich with the first-stage fitted regressors
    instruments = np.column_stack([data.z, data.x])
    structural = np.column_stack([data.d, data.x])
    q, _ = np.linalg.qr(instruments)
    fitted = q @ (q.T @ structural)
    n = data.n
    bread = checked_inverse(fitted.T @ structural / n)
    meat = (fitted * residuals[:, None] ** 2).T @ fitted / n
    variance = bread @ meat @ bread.T / n

    return LinearFit(
        estimator="2sls",
        alpha1=alpha1,
        alpha2=alpha2,
        residuals=residuals,
        hc_variance=0.5 * (variance + variance.T),
        labels=(data.d_label,) + data.x_labels,
        first_stage_f=f_stat,
    )


def _oracle_chunk(dgp: McConfig, size: int, seed: int, index: int):
    """Sums needed for the ratio estimator over one chunk of draws"""
    from estimation.services.simulation import draw_primitives, first_stage_scale, structural_scale

    rng = substream(seed, index, TAG_ORACLE)
    z, v, u = draw_primitives(size, rng)
    d = dgp.pi1 * z + dgp.pi2 + first_stage_scale(dgp, z) * v
    eps = u + dgp.lam * v
    # X = 1, so the projection of Z on X is its mean E|N(0,1)| = sqrt(2/pi)
    z_bar = z - math.sqrt(2.0 / math.pi)
    a = dgp.pi1 * z_bar * structural_scale(dgp, d) * eps
    b = dgp.pi1 ** 2 * z_bar ** 2
    return np.array([a.sum(), b.sum(), (a * a).sum(), (b * b).sum(), (a * b).sum()])


def bias_oracle_2sls(dgp: McConfig, draws: int = config.DEFAULT_ORACLE_DRAWS, seed: int = 0,
                     workers: int = 1, chunk_size: int = config.ORACLE_CHUNK_SIZE,
                     progress: bool = False) -> BiasOracleResult:
    """
    Probability-limit bias of 2SLS by Monte Carlo integration

    bias = pi1' E[Zbar g(D,X) eps] / (pi1' E[Zbar Zbar'] pi1), evaluated on draws
    from the design's exact distributions. Draws are split into fixed chunks with
    their own substreams, so the result does not depend on the worker count.

    Raises:
        DegenerateInstrument: when the estimated sigma_h is below 1e-12
    """
    if draws < config.MIN_ORACLE_DRAWS:
        raise ValueError(f"bias oracle needs at least {config.MIN_ORACLE_DRAWS} draws, got {draws}")
    sizes = [chunk_size] * (draws // chunk_size)
    if draws % chunk_size:
        sizes.append(draws % chunk_size)

    tasks = list(enumerate(sizes))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_oracle_chunk, dgp, size, seed, index) for index, size in tasks]
        sums = [f.result() for f in tqdm(futures, desc="oracle chunks", disable=not progress)]
    # reduce in chunk order for reproducible sums
    total = np.sum(np.vstack(sums), axis=0)

    mean_a, mean_b = total[0] / draws, total[1] / draws
    if mean_b < 1e-12:
        raise DegenerateInstrument(f"sigma_h estimate {mean_b:.3g} is degenerate")
    var_a = total[2] / draws - mean_a ** 2
    var_b = total[3] / draws - mean_b ** 2
    cov_ab = total[4] / draws - mean_a * mean_b
    bias = mean_a / mean_b
    # delta method for a ratio of means
    var_ratio = (var_a / mean_b ** 2 - 2.0 * mean_a * cov_ab / mean_b ** 3
                 + mean_a ** 2 * var_b / mean_b ** 4) / draws
    result = BiasOracleResult(
        bias=float(bias),
        sigma_h=float(mean_b),
        cross_moment=float(mean_a),
        mc_draws=int(draws),
        mc_standard_error=float(math.sqrt(max(var_ratio, 0.0))),
    )
    logger.info(f"2SLS bias oracle: {result.bias:.4f} (MC s.e. {result.mc_standard_error:.2g}, {draws} draws)")
    return result
