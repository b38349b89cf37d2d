"""
Skedastic (variance-function) models for the first stage.
Fits h(X,Z;gamma)^2 to squared first-stage residuals by least squares and
returns the fitted scale together with its analytic gradient in gamma.
"""

import logging
import warnings

import numpy as np

import config
from estimation.exceptions import (
    AllResidualsZero,
    DegenerateScaleWarning,
    NonConvergence,
    RankDeficient,
)
from estimation.models import (
    Dataset,
    SkedasticFamily,
    SkedasticFit,
    SkedasticSpec,
    constant_columns,
)
from estimation.services.linalg import ols_solve

logger = logging.getLogger(__name__)


def scale_values(spec: SkedasticSpec, gamma, features, floor=0.0) -> np.ndarray:
    """h = sqrt(max(h^2, floor)) at every row of features"""
    return np.sqrt(np.maximum(spec.variance(gamma, features), floor))


def gradient_matrix(spec: SkedasticSpec, features, h) -> np.ndarray:
    """
    Rows of grad_gamma h

    LinearPower: h^2 = w'gamma, so grad h = w / (2h)
    LogLinear:   h = exp(w'gamma / 2), so grad h = (h / 2) w
    """
    features = np.atleast_2d(features)
    if spec.family is SkedasticFamily.UNIT:
        return np.empty((features.shape[0], 0))
    h = np.asarray(h, dtype=np.float64).reshape(-1, 1)
    if spec.family is SkedasticFamily.LINEAR_POWER:
        return features / (2.0 * h)
    return 0.5 * h * features


def grad_h(spec: SkedasticSpec, gamma, x_row, z_row, constant_mask=None, floor=0.0) -> np.ndarray:
    """
    Gradient of h(x, z; gamma) with respect to gamma at one observation

    Args:
        spec: skedastic model
        gamma: parameter vector
        x_row, z_row: exogenous and instrument values of the observation
        constant_mask: which X entries are the constant column
        floor: variance floor used by the fit

    Returns:
        dim(gamma)-vector; evaluated at the floored scale (with a
        DegenerateScaleWarning) when the fitted variance is at the floor
    """
    w = spec.features(np.atleast_1d(x_row), np.atleast_1d(z_row), constant_mask)
    if spec.family is SkedasticFamily.UNIT:
        return np.empty(0)
    variance = float(spec.variance(gamma, w)[0])
    if variance <= floor:
        if floor <= 0.0:
            raise ValueError(f"fitted variance {variance:.3g} is not positive")
        warnings.warn("scale gradient evaluated at the variance floor", DegenerateScaleWarning, stacklevel=2)
    h = np.sqrt(max(variance, floor))
    return gradient_matrix(spec, w, [h])[0]


def _nls_objective(spec, gamma, features, v2):
    r = v2 - spec.variance(gamma, features)
    return float(r @ r)


def _gauss_newton(spec, gamma, features, v2):
    """Gauss-Newton with step halving on sum (v2 - exp(w'gamma))^2"""
    objective = _nls_objective(spec, gamma, features, v2)
    converged = False
    iterations = 0
    for iterations in range(1, config.GN_MAX_ITERATIONS + 1):
        fitted = spec.variance(gamma, features)
        jacobian = fitted[:, None] * features
        step = ols_solve(jacobian, v2 - fitted).coefficients

        t = 1.0
        candidate, candidate_obj = gamma, objective
        for _ in range(config.GN_MAX_HALVINGS):
            trial = gamma + t * step
            trial_obj = _nls_objective(spec, trial, features, v2)
            if trial_obj <= objective:
                candidate, candidate_obj = trial, trial_obj
                break
            t *= 0.5
        else:
            # no descent along the Gauss-Newton direction: stationary point
            converged = True
            break

        decrease = (objective - candidate_obj) / max(objective, np.finfo(float).tiny)
        logger.debug(f"Gauss-Newton iteration {iterations}: objective {candidate_obj:.6g}, step {t:g}")
        gamma, objective = candidate, candidate_obj
        if decrease < config.GN_TOLERANCE:
            converged = True
            break
    return gamma, objective, iterations, converged


def fit_skedastic(spec: SkedasticSpec, squared_residuals, data: Dataset, strict=False) -> SkedasticFit:
    """
    Fit the skedastic model by nonlinear least squares on squared residuals

    gamma-hat = argmin sum_i (V~_i^2 - h(X_i, Z_i; a)^2)^2. The objective is linear
    in gamma for LinearPower (plain OLS); LogLinear uses Gauss-Newton started at
    the OLS fit of log(V~^2 + eps) on the features.

    Args:
        spec: skedastic model
        squared_residuals: V~_i^2, nonnegative
        data: dataset supplying X and Z
        strict: raise NonConvergence instead of returning the best iterate

    Returns:
        SkedasticFit with floored h-hat and grad_gamma h at gamma-hat

    Raises:
        AllResidualsZero: every squared residual is zero
        RankDeficient: no more observations than skedastic parameters
        NonConvergence: LogLinear only, when strict
    """
    v2 = np.asarray(squared_residuals, dtype=np.float64)
    if v2.shape != (data.n,):
        raise ValueError(f"expected {data.n} squared residuals, got shape {v2.shape}")
    if np.any(v2 < 0):
        raise ValueError("squared residuals must be nonnegative")

    features = spec.features(data.x, data.z, constant_columns(data.x))
    n = data.n
    if spec.family is SkedasticFamily.UNIT:
        return SkedasticFit(
            spec=spec, gamma=np.empty(0), h_values=np.ones(n), grad_h=np.empty((n, 0)),
            nls_iterations=0, converged=True, floor=0.0, floored=np.zeros(n, dtype=bool),
            features=features,
        )
    if n <= features.shape[1]:
        raise RankDeficient(n, float("inf"),
                            what=f"skedastic fit ({n} observations for {features.shape[1]} parameters)")
    if not np.any(v2 > 0):
        raise AllResidualsZero("all first-stage residuals are zero")

    floor = config.SKEDASTIC_FLOOR_FRACTION * float(v2.mean())
    gamma_init = None
    iterations = 0
    converged = True
    if spec.family is SkedasticFamily.LINEAR_POWER:
        gamma = ols_solve(features, v2).coefficients
    else:
        gamma_init = ols_solve(features, np.log(v2 + config.LOG_EPSILON)).coefficients
        gamma, _, iterations, converged = _gauss_newton(spec, gamma_init, features, v2)

    variance = spec.variance(gamma, features)
    floored = variance < floor
    h = np.sqrt(np.maximum(variance, floor))
    if floored.any():
        logger.warning(f"{int(floored.sum())} fitted variances floored at {floor:.3g}")
    if not converged:
        message = f"{spec.name} skedastic fit did not converge in {iterations} iterations"
        if strict:
            raise NonConvergence(message)
        logger.warning(message)

    return SkedasticFit(
        spec=spec,
        gamma=gamma,
        h_values=h,
        grad_h=gradient_matrix(spec, features, h),
        nls_iterations=iterations,
        converged=converged,
        floor=floor,
        floored=floored,
        features=features,
        gamma_init=gamma_init,
        objective=_nls_objective(spec, gamma, features, v2),
    )
