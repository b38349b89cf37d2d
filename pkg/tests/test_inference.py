"""
Tests for the sandwich variance, the pairs bootstrap and coefficient summaries
"""

import numpy as np
import pytest

from estimation.exceptions import TooManyFailures
from estimation.models import CfModel, SkedasticFamily, SkedasticSpec
from estimation.services.baseline import fit_ols
from estimation.services.control_function import fit_cf, fit_first_stage, regressor_jacobian
from estimation.services.inference import (
    bootstrap,
    bootstrap_statistic,
    coefficient_table,
    critical_value,
    p_values,
    phi_inference,
    sandwich_variance,
    significance_stars,
)
from estimation.services.linalg import hc0_covariance


def _sample_means(sample):
    return np.array([sample.y.mean(), sample.d.mean()])


def test_sigma_phi_for_unit_scale_is_gram_matrix(hand_dataset):
    first_stage = fit_first_stage(hand_dataset, SkedasticSpec())
    inference = phi_inference(first_stage, hand_dataset)
    zx = np.column_stack([hand_dataset.z, hand_dataset.x])
    np.testing.assert_allclose(inference.sigma_phi, zx.T @ zx / 3.0, rtol=1e-14)
    np.testing.assert_allclose(inference.m_scores, zx * first_stage.v_raw[:, None], rtol=1e-14)
    assert (inference.n_pi, inference.n_gamma) == (2, 0)


@pytest.mark.parametrize("family", [SkedasticFamily.LINEAR_POWER, SkedasticFamily.LOG_LINEAR])
def test_first_step_scores_sum_to_zero(simulate, family):
    data = simulate(n=3000, gamma1=1.0)
    first_stage = fit_first_stage(data, SkedasticSpec(family))
    assert first_stage.skedastic.n_floored == 0
    scores = phi_inference(first_stage, data).m_scores
    assert scores.shape == (3000, 4)
    totals = np.abs(scores.sum(axis=0))
    scale = np.abs(scores).sum(axis=0)
    assert np.all(totals[:2] <= 1e-10 * scale[:2])
    tolerance = 1e-10 if family is SkedasticFamily.LINEAR_POWER else 1e-3
    assert np.all(totals[2:] <= tolerance * scale[2:])


def test_naive_sandwich_is_hc0(simulate):
    data = simulate(n=1500, lam=1.0, gamma1=1.0, delta1=1.0)
    fit = fit_cf(data, CfModel.from_name("cf1", skedastic="linear"))
    expected = hc0_covariance(fit.regressors, fit.u_hat) * data.n
    np.testing.assert_allclose(fit.omega_naive, expected, rtol=1e-10)
    assert not np.allclose(fit.omega, fit.omega_naive, rtol=1e-3)


def test_sandwich_rejects_mismatched_jacobian(simulate):
    data = simulate(n=300)
    model = CfModel.from_name("cf1", skedastic="linear")
    fit = fit_cf(data, model, with_variance=False)
    inference = phi_inference(fit.first_stage, data)
    jac = regressor_jacobian(model, data, fit.first_stage)
    with pytest.raises(ValueError, match="Jacobian"):
        sandwich_variance(fit, inference, jac[:, :-1, :])


def test_fit_is_invariant_to_row_order(simulate, rng):
    data = simulate(n=800, lam=1.0, gamma1=1.0, delta1=1.0, delta2=0.2)
    model = CfModel.from_name("cf2", skedastic="linear")
    base = fit_cf(data, model)
    shuffled = fit_cf(data.take(rng.permutation(data.n)), model)
    np.testing.assert_allclose(shuffled.alpha, base.alpha, rtol=1e-8)
    np.testing.assert_allclose(shuffled.omega, base.omega, rtol=1e-7)


def test_bootstrap_with_identity_resampling_has_zero_spread(simulate):
    data = simulate(n=400, lam=1.0, delta1=1.0)
    model = CfModel.from_name("cf1", skedastic="linear")
    result = bootstrap(data, model, B=2, seed=0, index_sampler=lambda b, n: np.arange(n))
    full = fit_cf(data, model, with_variance=False)
    assert result.replicates.shape == (2, 4)
    np.testing.assert_array_equal(result.se, 0.0)
    np.testing.assert_allclose(result.replicates[0], full.alpha, rtol=1e-12)


def test_bootstrap_is_independent_of_worker_count(iv_data):
    serial = bootstrap_statistic(iv_data, _sample_means, B=40, seed=7, workers=1)
    threaded = bootstrap_statistic(iv_data, _sample_means, B=40, seed=7, workers=4)
    np.testing.assert_array_equal(serial.replicates, threaded.replicates)
    np.testing.assert_array_equal(serial.ci_percentile, threaded.ci_percentile)
    assert np.all(serial.ci_percentile[:, 0] <= serial.ci_percentile[:, 1])
    assert serial.b_effective == 40


def test_bootstrap_needs_two_replicates(iv_data):
    with pytest.raises(ValueError):
        bootstrap_statistic(iv_data, _sample_means, B=1, seed=1)


def _degenerate_for_first(count):
    """Resample a single row for the first `count` replicates"""
    def sampler(b, n):
        if b < count:
            return np.zeros(n, dtype=int)
        return np.arange(n)
    return sampler


def test_bootstrap_drops_and_counts_failed_replicates(iv_data):
    statistic = lambda sample: fit_ols(sample).coefficients  # noqa: E731
    result = bootstrap_statistic(iv_data, statistic, B=10, seed=1, index_sampler=_degenerate_for_first(5))
    assert result.failed_replicates == 5
    assert result.b_effective == 5
    assert result.replicates.shape == (5, 2)

    with pytest.raises(TooManyFailures):
        bootstrap_statistic(iv_data, statistic, B=10, seed=1, index_sampler=_degenerate_for_first(6))


def test_normal_summaries():
    assert critical_value(0.95) == pytest.approx(1.959964, abs=1e-6)
    np.testing.assert_allclose(p_values([1.959964, 0.0], [1.0, 1.0]), [0.05, 1.0], atol=1e-6)
    assert significance_stars(0.001) == "***"
    assert significance_stars(0.03) == "**"
    assert significance_stars(0.07) == "*"
    assert significance_stars(0.5) == ""
    assert significance_stars(float("nan")) == ""


def test_coefficient_table_rows(iv_data):
    boot = bootstrap_statistic(iv_data, _sample_means, B=20, seed=3)
    rows = coefficient_table(("a", "b"), np.array([2.0, 0.0]), np.array([0.5, 0.0]), boot)
    assert rows[0]["term"] == "a"
    assert rows[0]["z"] == pytest.approx(4.0)
    assert rows[0]["stars"] == "***"
    assert np.isnan(rows[1]["z"])
    assert {"se_bootstrap", "ci_low", "ci_high"} <= set(rows[0])
    assert "ci_low" not in coefficient_table(("a",), [1.0], [1.0])[0]


@pytest.mark.slow
def test_bootstrap_agrees_with_corrected_sandwich(simulate):
    data = simulate(n=4000, lam=1.0, gamma1=1.0, delta1=1.0)
    model = CfModel.from_name("cf1", skedastic="linear")
    fit = fit_cf(data, model)
    result = bootstrap(data, model, B=500, seed=17, workers=4)
    assert result.se[0] == pytest.approx(fit.se[0], rel=0.15)
