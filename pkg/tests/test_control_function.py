"""
Tests for the first stage, the CF regressors, their Jacobian and the CF fit
"""

from dataclasses import replace

import numpy as np
import pytest

from estimation.exceptions import DuplicateColumn, RankDeficient
from estimation.models import GRID_PRESETS, CfModel, Dataset, SkedasticFamily, SkedasticSpec
from estimation.services.baseline import fit_2sls, fit_ols
from estimation.services.control_function import (
    alpha1_by_projection,
    build_regressors,
    evaluate_regressors,
    fit_cf,
    fit_first_stage,
    regressor_jacobian,
    wald_test,
)
from estimation.services.linalg import hc0_covariance, ols_solve

UNIT = SkedasticSpec()


def _with_v_hat(data, v_hat):
    first_stage = fit_first_stage(data, UNIT)
    return replace(first_stage, v_hat=np.asarray(v_hat, dtype=float))


def _row_data():
    """First row has D = 2, Z = 1"""
    return Dataset.from_arrays(
        y=np.array([1.0, 0.5, 2.0, 3.0, 1.5]),
        d=np.array([2.0, 1.0, 3.0, 0.5, 2.5]),
        z=np.array([1.0, 0.2, 1.4, 0.1, 2.2]),
    )


def test_unit_first_stage_keeps_raw_residuals(iv_data):
    first_stage = fit_first_stage(iv_data, UNIT)
    np.testing.assert_array_equal(first_stage.v_hat, first_stage.v_raw)
    assert first_stage.dim_phi == iv_data.p_z + iv_data.p_x
    design = np.column_stack([iv_data.z, iv_data.x])
    scale = np.abs(design).max() * np.abs(iv_data.d).max() * iv_data.n
    assert np.all(np.abs(design.T @ first_stage.v_raw) <= 1e-8 * scale)


def test_normalized_control_function_has_unit_variance(simulate):
    data = simulate(n=100_000, gamma1=0.0)
    first_stage = fit_first_stage(data, UNIT)
    assert 0.97 <= np.mean(first_stage.v_hat ** 2) <= 1.03


@pytest.mark.slow
def test_linear_skedastic_fit_matches_oracle_regression(simulate):
    data = simulate(n=1_000_000, gamma1=1.0)
    first_stage = fit_first_stage(data, SkedasticSpec(SkedasticFamily.LINEAR_POWER))
    # pi1 = pi2 = 1, so h V = D - Z - 1 exactly
    true_scaled = (data.d - data.z[:, 0] - 1.0) ** 2
    oracle = ols_solve(np.column_stack([np.ones(data.n), data.z[:, 0]]), true_scaled).coefficients
    np.testing.assert_allclose(first_stage.skedastic.gamma, oracle, atol=0.01)
    np.testing.assert_allclose(first_stage.skedastic.gamma, [1.0, 1.0], atol=0.05)


def test_build_regressors_monomials():
    data = _row_data()
    first_stage = _with_v_hat(data, [0.5, -1.0, 0.3, 0.2, -0.4])
    cf1 = build_regressors(CfModel.from_name("cf1"), data, first_stage)
    assert cf1.column_labels == ("d", "const", "V", "V*D")
    np.testing.assert_allclose(cf1.values[0, 2:], [0.5, 1.0])
    cf2 = build_regressors(CfModel.from_name("cf2"), data, first_stage)
    np.testing.assert_allclose(cf2.values[0, 2:], [0.5, 1.0, 2.0])


def test_zero_control_function_is_rank_deficient():
    data = _row_data()
    first_stage = _with_v_hat(data, np.zeros(5))
    regressors = build_regressors(CfModel.from_name("cf1"), data, first_stage)
    np.testing.assert_array_equal(regressors.values[:, 2:], 0.0)
    with pytest.raises(RankDeficient):
        ols_solve(regressors, data.y)


def test_x_interactions_need_a_nonconstant_column(iv_factory):
    with pytest.raises(DuplicateColumn):
        build_regressors(CfModel.from_name("v,vx"), _row_data(), fit_first_stage(_row_data(), UNIT))
    data = iv_factory(200, extra_x=True)
    first_stage = fit_first_stage(data, UNIT)
    regressors = build_regressors(CfModel.from_name("v,vx"), data, first_stage)
    assert regressors.column_labels == ("d", "const", "x1", "V", "V*x1")
    np.testing.assert_allclose(regressors.column("V*x1"), first_stage.v_hat * data.x[:, 1])


def test_jacobian_hand_values():
    data = _row_data()
    first_stage = _with_v_hat(data, [0.5, -1.0, 0.3, 0.2, -0.4])
    jac = regressor_jacobian(CfModel.from_name("v"), data, first_stage)
    assert jac.shape == (5, 3, 2)
    np.testing.assert_array_equal(jac[:, :2, :], 0.0)
    np.testing.assert_array_equal(jac[:, 2, 0], -data.z[:, 0])

    jac = regressor_jacobian(CfModel.from_name("v2d"), data, first_stage)
    assert jac[0, 2, 0] == pytest.approx(-2.0)


def _finite_difference_jacobian(model, data, first_stage, rows):
    phi = first_stage.phi
    columns = []
    for k in range(phi.size):
        step = 1e-6 * max(abs(phi[k]), 1.0)
        shift = np.zeros(phi.size)
        shift[k] = step
        upper = evaluate_regressors(model, data, first_stage, phi + shift).values[rows]
        lower = evaluate_regressors(model, data, first_stage, phi - shift).values[rows]
        columns.append((upper - lower) / (2.0 * step))
    return np.stack(columns, axis=2)


@pytest.mark.parametrize("family", [SkedasticFamily.LINEAR_POWER, SkedasticFamily.LOG_LINEAR])
@pytest.mark.parametrize("terms", ["cf1", "cf2", *GRID_PRESETS])
def test_jacobian_matches_finite_differences(simulate, family, terms):
    data = simulate(n=400, gamma1=1.0, delta1=1.0)
    model = CfModel.from_name(terms, skedastic=family.value)
    first_stage = fit_first_stage(data, model.skedastic_spec)
    assert first_stage.skedastic.n_floored == 0
    rows = np.arange(50)
    analytic = regressor_jacobian(model, data, first_stage)[rows]
    numeric = _finite_difference_jacobian(model, data, first_stage, rows)
    scale = max(1.0, np.abs(analytic).max())
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7 * scale)


def test_jacobian_with_x_interaction(iv_factory):
    data = iv_factory(300, extra_x=True, heteroskedastic=True)
    model = CfModel.from_name("v,vd,vx", skedastic="linear")
    first_stage = fit_first_stage(data, model.skedastic_spec)
    rows = np.arange(50)
    analytic = regressor_jacobian(model, data, first_stage)[rows]
    numeric = _finite_difference_jacobian(model, data, first_stage, rows)
    scale = max(1.0, np.abs(analytic).max())
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7 * scale)


def test_cf_with_single_residual_term_equals_2sls(rng, iv_factory):
    model = CfModel.from_name("v", skedastic="unit")
    for _ in range(100):
        n = int(rng.integers(100, 2001))
        p_z = int(rng.integers(1, 4))
        data = iv_factory(n, p_z=p_z, extra_x=bool(rng.integers(0, 2)))
        cf = fit_cf(data, model, with_variance=False)
        tsls = fit_2sls(data)
        assert cf.alpha1 == pytest.approx(tsls.alpha1, rel=1e-8)


def test_cf_fit_invariants(simulate):
    data = simulate(n=2000, lam=1.0, gamma1=1.0, delta1=1.0, delta2=0.2)
    fit = fit_cf(data, CfModel.from_name("cf2", skedastic="linear"))
    r = fit.regressors.values
    scale = np.abs(r).max(axis=0) * np.abs(data.y).max() * data.n
    assert np.all(np.abs(r.T @ fit.u_hat) <= 1e-8 * scale)

    np.testing.assert_allclose(fit.omega, fit.omega.T, rtol=0, atol=1e-12 * np.abs(fit.omega).max())
    eigenvalues = np.linalg.eigvalsh(fit.omega)
    assert eigenvalues.min() >= -1e-9 * eigenvalues.max()

    assert fit.alpha1 == pytest.approx(alpha1_by_projection(fit.regressors, data.y), rel=1e-8)
    np.testing.assert_array_equal(fit.cf_indices, [2, 3, 4])
    assert fit.se.shape == (5,)


def test_scale_equivariance_in_y(simulate):
    data = simulate(n=1000, lam=1.0, gamma1=1.0, delta1=1.0)
    model = CfModel.from_name("cf1", skedastic="linear")
    base = fit_cf(data, model)
    scaled = fit_cf(replace(data, y=3.0 * data.y), model)
    np.testing.assert_allclose(scaled.alpha, 3.0 * base.alpha, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(scaled.omega, 9.0 * base.omega, rtol=1e-10,
                               atol=1e-12 * np.abs(base.omega).max())


def test_empty_term_set_reduces_to_ols_with_hc0(simulate):
    data = simulate(n=500, lam=1.0, delta1=1.0)
    fit = fit_cf(data, CfModel.from_name("none", skedastic="linear"))
    ols = fit_ols(data)
    np.testing.assert_allclose(fit.alpha, ols.coefficients, rtol=1e-10)
    np.testing.assert_array_equal(fit.sandwich.correction_term, 0.0)
    np.testing.assert_allclose(fit.omega, fit.omega_naive, rtol=1e-12)
    expected = hc0_covariance(fit.regressors, fit.u_hat) * data.n
    np.testing.assert_allclose(fit.omega, expected, rtol=1e-10)


def test_wald_test_detects_endogeneity(simulate):
    data = simulate(n=2000, lam=1.0, gamma1=0.0, delta1=1.0, delta2=0.2)
    fit = fit_cf(data, CfModel.from_name("cf2", skedastic="linear"))
    result = wald_test(fit)
    assert result.df == 3
    assert result.labels == ("V", "V*D", "V*D^2")
    assert result.p_value < 0.01
    with pytest.raises(ValueError):
        wald_test(fit_cf(data, CfModel.from_name("cf1"), with_variance=False))


def test_rescaling_d_rescales_alpha1(simulate):
    data = simulate(n=1000, lam=1.0, gamma1=1.0, delta1=1.0)
    model = CfModel.from_name("cf1", skedastic="linear")
    base = fit_cf(data, model, with_variance=False)
    rescaled = fit_cf(replace(data, d=2.5 * data.d), model, with_variance=False)
    assert rescaled.alpha1 == pytest.approx(base.alpha1 / 2.5, rel=1e-8)
    np.testing.assert_allclose(rescaled.first_stage.v_hat, base.first_stage.v_hat, rtol=1e-8, atol=1e-10)


@pytest.mark.slow
def test_wald_test_size_without_endogeneity():
    from estimation.models import McConfig
    from estimation.services.simulation import simulate_dgp

    dgp = McConfig(n=1000, replications=300, lam=0.0, gamma1=1.0, delta1=1.0, seed=61)
    model = CfModel.from_name("cf2", skedastic="linear")
    rejections = [wald_test(fit_cf(simulate_dgp(dgp, r), model)).p_value < 0.05 for r in range(dgp.replications)]
    assert 0.01 <= np.mean(rejections) <= 0.10
