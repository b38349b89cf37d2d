"""
Inference for the two-step estimator
Influence-function sandwich with the generated-regressor correction,
pairs bootstrap and coefficient summaries
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np
from scipy import stats
from scipy.linalg import block_diag
from tqdm.auto import tqdm

import config
from estimation.exceptions import (
    EstimationError,
    SingularSigmaAlpha,
    SingularSigmaPhi,
    TooManyFailures,
)
from estimation.models import (
    BootstrapResult,
    CfFit,
    CfModel,
    Dataset,
    FirstStageFit,
    PhiInference,
    SandwichResult,
)
from estimation.services.control_function import fit_cf
from estimation.services.linalg import checked_inverse
from utils.random_streams import TAG_BOOTSTRAP, resolve_seed, substream

logger = logging.getLogger(__name__)


def phi_inference(first_stage: FirstStageFit, data: Dataset) -> PhiInference:
    """
    Sample Hessian and per-observation scores of phi-hat = (pi1, pi2, gamma)

    Sigma_phi = blockdiag((Z,X)'(Z,X)/n, 2 mean(grad_h grad_h' h^2))
    M_i = (Z_i V~_i, X_i V~_i, grad_h_i (V-hat_i^2 - 1) h_i^3)

    Raises:
        SingularSigmaPhi: when either diagonal block is singular
    """
    sked = first_stage.skedastic
    if not sked.converged:
        logger.warning("Skedastic fit did not converge; phi inference uses the last iterate")
    n = data.n
    zx = np.column_stack([data.z, data.x])
    block_pi = zx.T @ zx / n
    checked_inverse(block_pi, SingularSigmaPhi, "(Z, X) Gram block of Sigma_phi")

    h = sked.h_values
    grad = sked.grad_h
    block_gamma = 2.0 * (grad * (h ** 2)[:, None]).T @ grad / n
    checked_inverse(block_gamma, SingularSigmaPhi, "skedastic block of Sigma_phi")

    scores = np.column_stack([
        zx * first_stage.v_raw[:, None],
        grad * ((first_stage.v_hat ** 2 - 1.0) * h ** 3)[:, None],
    ])
    return PhiInference(
        sigma_phi=block_diag(block_pi, block_gamma),
        m_scores=scores,
        n_pi=zx.shape[1],
        n_gamma=grad.shape[1],
    )


def sandwich_variance(cf_fit: CfFit, phi_inf: PhiInference, jacobians, correction=True) -> SandwichResult:
    """
    Omega = Sigma_alpha^-1 Psi Sigma_alpha^-1 with psi_i = R_i U_i + C Sigma_phi^-1 M_i

    Args:
        cf_fit: second-step fit
        phi_inf: first-step Hessian and scores
        jacobians: per-row Jacobians of R(phi), shape (n, dim R, dim phi)
        correction: include the generated-regressor term; without it the
            result is the HC0 sandwich of the second-step OLS

    Returns:
        SandwichResult; standard errors are sqrt(diag(omega) / n)

    Raises:
        SingularSigmaAlpha: when R'R / n is singular
    """
    r = cf_fit.regressors.values
    u = cf_fit.u_hat
    n, k = r.shape
    jacobians = np.asarray(jacobians, dtype=np.float64)
    if jacobians.shape != (n, k, phi_inf.sigma_phi.shape[0]):
        raise ValueError(f"Jacobian shape {jacobians.shape} does not match ({n}, {k}, {phi_inf.sigma_phi.shape[0]})")
    if phi_inf.m_scores.shape[0] != n:
        raise ValueError("scores and regressors have different numbers of rows")

    sigma_alpha = r.T @ r / n
    sigma_alpha_inv = checked_inverse(sigma_alpha, SingularSigmaAlpha, "Sigma_alpha")

    psi = r * u[:, None]
    correction_term = np.zeros((k, jacobians.shape[2]))
    if correction and jacobians.shape[2] > 0:
        alpha_j = np.einsum("k,ikp->ip", cf_fit.alpha, jacobians)
        correction_term = (np.einsum("i,ikp->kp", u, jacobians) - r.T @ alpha_j) / n
        sigma_phi_inv = checked_inverse(phi_inf.sigma_phi, SingularSigmaPhi, "Sigma_phi")
        psi = psi + phi_inf.m_scores @ sigma_phi_inv @ correction_term.T

    omega = sigma_alpha_inv @ (psi.T @ psi / n) @ sigma_alpha_inv
    return SandwichResult(
        omega=0.5 * (omega + omega.T),
        sigma_alpha=sigma_alpha,
        psi=psi,
        correction_term=correction_term,
    )


def bootstrap_statistic(data: Dataset, statistic: Callable[[Dataset], np.ndarray],
                        B: int = config.DEFAULT_BOOTSTRAP, seed: Optional[int] = None,
                        workers: int = 1, index_sampler=None, progress=False) -> BootstrapResult:
    """
    Pairs bootstrap of any vector statistic of a dataset

    Replicate b resamples rows with the substream keyed by (seed, b), so the
    replicates do not depend on the worker count.

    Args:
        data: dataset to resample
        statistic: Dataset -> vector of estimates
        B: number of replicates (at least 2)
        seed: master seed; OS entropy (logged) when None
        workers: thread count
        index_sampler: optional (b, n) -> row indices, replacing the random draw
        progress: show a progress bar

    Raises:
        TooManyFailures: more than B/2 replicates raised EstimationError
    """
    if B < 2:
        raise ValueError(f"bootstrap needs B >= 2, got {B}")
    seed = resolve_seed(seed)
    n = data.n

    def replicate(b):
        if index_sampler is not None:
            indices = np.asarray(index_sampler(b, n))
        else:
            indices = substream(seed, b, TAG_BOOTSTRAP).integers(0, n, size=n)
        try:
            return np.atleast_1d(np.asarray(statistic(data.take(indices)), dtype=np.float64))
        except EstimationError as e:
            logger.debug(f"Bootstrap replicate {b} failed: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(tqdm(pool.map(replicate, range(B)), total=B, desc="bootstrap", disable=not progress))

    successes = [o for o in outcomes if o is not None]
    failed = B - len(successes)
    if failed:
        logger.warning(f"{failed} of {B} bootstrap replicates failed and were dropped")
    if failed > B / 2:
        raise TooManyFailures(failed, B)

    replicates = np.vstack(successes)
    tail = (1.0 - config.CONFIDENCE_LEVEL) / 2.0
    ci = np.quantile(replicates, [tail, 1.0 - tail], axis=0, method="linear").T
    se = replicates.std(axis=0, ddof=1 if replicates.shape[0] > 1 else 0)
    logger.info(f"Bootstrap: {replicates.shape[0]} effective replicates (seed {seed})")
    return BootstrapResult(replicates=replicates, se=se, ci_percentile=ci, failed_replicates=failed, B=B)


def bootstrap(data: Dataset, model: CfModel, B: int = config.DEFAULT_BOOTSTRAP, seed: Optional[int] = None,
              workers: int = 1, index_sampler=None, progress=False) -> BootstrapResult:
    """
    Pairs bootstrap of the full two-step control-function pipeline

    Each replicate re-runs the first stage, the skedastic fit and the CF fit on
    the resampled rows; replicates failing with an estimation error (rank
    deficiency, non-convergence) are dropped and counted.
    """
    def statistic(sample):
        return fit_cf(sample, model, strict=True, with_variance=False).alpha

    return bootstrap_statistic(data, statistic, B=B, seed=seed, workers=workers,
                               index_sampler=index_sampler, progress=progress)


def critical_value(level: float = config.CONFIDENCE_LEVEL) -> float:
    """Two-sided Gaussian critical value"""
    return float(stats.norm.ppf(0.5 + level / 2.0))


def p_values(estimates, se) -> np.ndarray:
    """Two-sided normal p-values of estimate / se"""
    estimates = np.asarray(estimates, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(estimates / se)
    return 2.0 * stats.norm.sf(z)


def significance_stars(p_value: float) -> str:
    if not np.isfinite(p_value):
        return ""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.1:
        return "*"
    return ""


def coefficient_table(labels, estimates, se, bootstrap_result: Optional[BootstrapResult] = None):
    """Rows of label / estimate / se / z / p (/ bootstrap se and CI) for reports"""
    pv = p_values(estimates, se)
    rows = []
    for i, label in enumerate(labels):
        row = {
            "term": label,
            "estimate": float(estimates[i]),
            "se": float(se[i]),
            "z": float(estimates[i] / se[i]) if se[i] > 0 else float("nan"),
            "p_value": float(pv[i]),
            "stars": significance_stars(pv[i]),
        }
        if bootstrap_result is not None:
            row["se_bootstrap"] = float(bootstrap_result.se[i])
            row["ci_low"] = float(bootstrap_result.ci_percentile[i, 0])
            row["ci_high"] = float(bootstrap_result.ci_percentile[i, 1])
        rows.append(row)
    return rows
