"""
Augmented control-function estimator
First stage, normalized control function V-hat, the regressor vector
R(phi) = (D, X, CF terms), its Jacobian in phi and the second-stage OLS.
"""

import logging
import warnings
from dataclasses import replace

import numpy as np
from scipy import stats

import config
from estimation.exceptions import AllResidualsZero, DegenerateScaleWarning, DuplicateColumn
from estimation.models import (
    CfFit,
    CfModel,
    Dataset,
    DesignMatrix,
    FirstStageFit,
    SkedasticSpec,
    WaldTest,
    constant_columns,
)
from estimation.services.baseline import first_stage_f
from estimation.services.linalg import checked_inverse, ols_solve
from estimation.services.skedastic import fit_skedastic, scale_values

logger = logging.getLogger(__name__)


def fit_first_stage(data: Dataset, spec: SkedasticSpec, strict=False) -> FirstStageFit:
    """
    OLS of D on (Z, X), skedastic fit on the squared residuals, V-hat = V~ / h-hat

    Args:
        data: dataset
        spec: skedastic model for the first-stage scale
        strict: raise NonConvergence from the skedastic fit

    Returns:
        FirstStageFit

    Raises:
        RankDeficient: when (Z, X) is collinear
        AllResidualsZero: when D is an exact linear function of (Z, X)
    """
    design = DesignMatrix(np.column_stack([data.z, data.x]), data.z_labels + data.x_labels)
    proj = ols_solve(design, data.d)
    v_raw = proj.residuals
    if np.linalg.norm(v_raw) <= config.RANK_TOLERANCE * max(np.linalg.norm(data.d), 1.0):
        raise AllResidualsZero("first-stage residuals are zero: D is spanned by (Z, X)")

    scale = np.max(np.abs(design.values), axis=0) * max(np.max(np.abs(data.d)), 1.0) * data.n
    orthogonality = np.abs(design.values.T @ v_raw) / scale
    if np.any(orthogonality > config.ORTHOGONALITY_TOLERANCE):
        logger.warning(f"First-stage residuals not orthogonal to (Z, X): max {orthogonality.max():.3g}")

    skedastic = fit_skedastic(spec, v_raw ** 2, data, strict=strict)
    return FirstStageFit(
        pi1=proj.coefficients[:data.p_z],
        pi2=proj.coefficients[data.p_z:],
        skedastic=skedastic,
        v_raw=v_raw,
        v_hat=v_raw / skedastic.h_values,
        f_statistic=first_stage_f(data),
    )


def _cf_layout(model: CfModel, data: Dataset):
    """(term, X column or None, label) for every CF column in model order"""
    free = ~constant_columns(data.x)
    free_labels = [lab for lab, f in zip(data.x_labels, free) if f]
    layout = []
    for term in model.terms:
        if term.x_power == 0:
            layout.append((term, None, term.label()))
            continue
        if not free_labels:
            raise DuplicateColumn(f"term {term.label()} needs a nonconstant X column")
        for j, lab in zip(np.flatnonzero(free), free_labels):
            layout.append((term, data.x[:, j], term.label(lab)))
    return layout


def _split_phi(phi, data: Dataset):
    phi = np.asarray(phi, dtype=np.float64)
    p_z, p_x = data.p_z, data.p_x
    return phi[:p_z], phi[p_z:p_z + p_x], phi[p_z + p_x:]


def control_values(data: Dataset, first_stage: FirstStageFit, phi=None):
    """
    V(phi) and h(phi) at every observation

    phi defaults to the fitted (pi1, pi2, gamma); the variance floor of the fit
    is applied to h.
    """
    if phi is None:
        return first_stage.v_hat, first_stage.skedastic.h_values
    pi1, pi2, gamma = _split_phi(phi, data)
    sked = first_stage.skedastic
    h = scale_values(sked.spec, gamma, sked.features, sked.floor)
    return (data.d - data.z @ pi1 - data.x @ pi2) / h, h


def evaluate_regressors(model: CfModel, data: Dataset, first_stage: FirstStageFit, phi=None) -> DesignMatrix:
    """R(phi) = [D | X | CF terms], evaluated at an arbitrary phi"""
    if first_stage.v_raw.shape[0] != data.n:
        raise ValueError("first stage and data have different numbers of observations")
    v, _ = control_values(data, first_stage, phi)
    labels = [data.d_label, *data.x_labels]
    columns = [data.d, *data.x.T]
    for term, x_col, label in _cf_layout(model, data):
        value = data.d ** term.d_power * v ** term.v_power
        if x_col is not None:
            value = value * x_col ** term.x_power
        if label in labels:
            raise DuplicateColumn(f"control-function column '{label}' collides with an existing column")
        if any(np.array_equal(value, x) for x in data.x.T):
            raise DuplicateColumn(f"control-function column '{label}' duplicates an X column")
        labels.append(label)
        columns.append(value)
    return DesignMatrix(np.column_stack(columns), tuple(labels))


def build_regressors(model: CfModel, data: Dataset, first_stage: FirstStageFit) -> DesignMatrix:
    """
    R(phi-hat), columns ordered [D | X-block | CF terms in model order]

    Raises:
        DuplicateColumn: when a CF term collides with the X block
    """
    return evaluate_regressors(model, data, first_stage)


def regressor_jacobian(model: CfModel, data: Dataset, first_stage: FirstStageFit) -> np.ndarray:
    """
    Per-row Jacobian of R(phi) with respect to phi = (pi1, pi2, gamma)

    The D and X rows are zero. A CF term D^s X^q V^j has row
    j D^s X^q V^(j-1) dV/dphi with dV/dpi1 = -Z/h, dV/dpi2 = -X/h and
    dV/dgamma = -V grad_gamma(h) / h.

    Returns:
        array of shape (n, dim R, dim phi)
    """
    sked = first_stage.skedastic
    if sked.n_floored:
        warnings.warn(f"{sked.n_floored} Jacobian rows use a floored scale", DegenerateScaleWarning, stacklevel=2)
    v = first_stage.v_hat
    h = sked.h_values[:, None]
    dv = np.column_stack([-data.z / h, -data.x / h, -(v[:, None] * sked.grad_h) / h])

    layout = _cf_layout(model, data)
    k_fixed = 1 + data.p_x
    jac = np.zeros((data.n, k_fixed + len(layout), dv.shape[1]))
    for offset, (term, x_col, _) in enumerate(layout):
        factor = term.v_power * data.d ** term.d_power * v ** (term.v_power - 1)
        if x_col is not None:
            factor = factor * x_col ** term.x_power
        jac[:, k_fixed + offset, :] = factor[:, None] * dv
    return jac


def fit_cf(data: Dataset, model: CfModel, strict=False, with_variance=True) -> CfFit:
    """
    Two-step control-function fit

    Args:
        data: dataset
        model: CF term set and skedastic model
        strict: raise NonConvergence from the skedastic fit
        with_variance: assemble the corrected and naive sandwich variances

    Returns:
        CfFit; alpha1 is the coefficient on D

    Raises:
        RankDeficient: e.g. collinear CF terms or V-hat identically zero
    """
    first_stage = fit_first_stage(data, model.skedastic_spec, strict=strict)
    regressors = build_regressors(model, data, first_stage)
    proj = ols_solve(regressors, data.y)
    fit = CfFit(
        alpha=proj.coefficients,
        regressors=regressors,
        u_hat=proj.residuals,
        first_stage=first_stage,
        model=model,
    )
    if not with_variance:
        return fit

    from estimation.services.inference import phi_inference, sandwich_variance

    phi_inf = phi_inference(first_stage, data)
    jacobians = regressor_jacobian(model, data, first_stage)
    sandwich = sandwich_variance(fit, phi_inf, jacobians)
    naive = sandwich_variance(fit, phi_inf, jacobians, correction=False)
    fit = replace(fit, omega=sandwich.omega, omega_naive=naive.omega, sandwich=sandwich)
    logger.debug(f"CF fit ({model.name}, {model.skedastic_spec.name}): alpha1 = {fit.alpha1:.6g}, "
                 f"se = {fit.se[0]:.4g}")
    return fit


def alpha1_by_projection(regressors: DesignMatrix, y) -> float:
    """
    alpha1 from the partialled-out endogenous regressor

    sum (D - L[D|W])_i Y_i / sum (D - L[D|W])_i^2, where L[D|W] is the linear
    projection of D on the remaining columns W of R.
    """
    values = regressors.values
    if values.shape[1] == 1:
        d_tilde = values[:, 0]
    else:
        d_tilde = ols_solve(values[:, 1:], values[:, 0]).residuals
    denominator = float(d_tilde @ d_tilde)
    if denominator <= config.RANK_TOLERANCE * float(values[:, 0] @ values[:, 0]):
        raise ValueError("D is (numerically) spanned by the other regressors")
    return float(d_tilde @ np.asarray(y, dtype=np.float64)) / denominator


def wald_test(cf_fit: CfFit, indices=None) -> WaldTest:
    """
    Wald test that the selected coefficients (default: the CF block) are zero

    Uses the corrected sandwich; statistic n a' Omega_sub^-1 a ~ chi2(len(a)).
    """
    if cf_fit.omega is None:
        raise ValueError("the fit carries no variance estimate")
    indices = cf_fit.cf_indices if indices is None else np.asarray(indices, dtype=int)
    if indices.size == 0:
        raise ValueError("no coefficients to test")
    a = cf_fit.alpha[indices]
    omega_sub = cf_fit.omega[np.ix_(indices, indices)]
    statistic = float(cf_fit.n * a @ checked_inverse(omega_sub) @ a)
    df = int(indices.size)
    return WaldTest(
        statistic=statistic,
        df=df,
        p_value=float(stats.chi2.sf(statistic, df)),
        labels=tuple(cf_fit.labels[i] for i in indices),
    )
