"""
Tests for OLS, 2SLS and the 2SLS bias oracle
"""

import numpy as np
import pytest

from estimation.exceptions import DegenerateInstrument, WeakInstrumentWarning
from estimation.models import Dataset, McConfig
from estimation.services.baseline import bias_oracle_2sls, first_stage_f, fit_2sls, fit_ols
from estimation.services.simulation import simulate_dgp


def test_ols_on_exogenous_design(rng):
    n = 5000
    z = rng.normal(size=n)
    d = rng.normal(size=n)
    y = 1.0 + 2.0 * d + rng.normal(size=n)
    fit = fit_ols(Dataset.from_arrays(y=y, d=d, z=z))
    assert fit.estimator == "ols"
    assert fit.labels == ("d", "const")
    assert abs(fit.alpha1 - 2.0) < 4 * fit.se[0]
    assert abs(fit.alpha2[0] - 1.0) < 4 * fit.se[1]


def test_just_identified_2sls_is_covariance_ratio(iv_data):
    fit = fit_2sls(iv_data)
    z = iv_data.z[:, 0] - iv_data.z[:, 0].mean()
    expected = (z @ iv_data.y) / (z @ iv_data.d)
    assert fit.alpha1 == pytest.approx(expected, rel=1e-10)
    np.testing.assert_allclose(fit.alpha2, [iv_data.y.mean() - expected * iv_data.d.mean()], rtol=1e-10)


def test_2sls_consistent_where_ols_is_not(iv_factory):
    data = iv_factory(20000, p_z=2, extra_x=True)
    tsls = fit_2sls(data)
    ols = fit_ols(data)
    assert abs(tsls.alpha1 - 2.0) < 4 * tsls.se[0]
    assert ols.alpha1 - 2.0 > 0.1
    assert tsls.first_stage_f > 1000


def test_weak_instrument_warning(rng):
    n = 300
    z = rng.normal(size=n)
    e = rng.normal(size=n)
    basis = np.column_stack([np.ones(n), z])
    e_perp = e - basis @ np.linalg.lstsq(basis, e, rcond=None)[0]
    d = e_perp + 0.01 * (z - z.mean())
    y = d + rng.normal(size=n)
    data = Dataset.from_arrays(y=y, d=d, z=z)
    assert first_stage_f(data) < 10
    with pytest.warns(WeakInstrumentWarning):
        fit_2sls(data)


def test_2sls_recovers_oracle_when_endogeneity_is_homoskedastic(simulate):
    data = simulate(n=20000, lam=1.0, gamma1=0.0, delta1=0.0, delta2=0.0)
    fit = fit_2sls(data)
    assert abs(fit.alpha1 - 1.0) < 4 * fit.se[0]


def test_bias_oracle_closed_form_and_worker_independence():
    # g = 0.2 D^2 + 1 with h = 1 has bias exactly 2 * 0.2 = 0.4
    dgp = McConfig(lam=1.0, gamma1=0.0, delta1=0.0, delta2=0.2)
    serial = bias_oracle_2sls(dgp, draws=2_000_000, seed=3, workers=1, chunk_size=500_000)
    threaded = bias_oracle_2sls(dgp, draws=2_000_000, seed=3, workers=4, chunk_size=500_000)
    assert serial == threaded
    assert abs(serial.bias - 0.4) < 4 * serial.mc_standard_error
    assert serial.sigma_h == pytest.approx(1.0 - 2.0 / np.pi, rel=0.01)


def test_bias_oracle_zero_without_structural_heteroskedasticity():
    result = bias_oracle_2sls(McConfig(lam=1.0, gamma1=1.0), draws=1_000_000, seed=1)
    assert abs(result.bias) < 4 * result.mc_standard_error


def test_bias_oracle_rejects_small_draws_and_degenerate_instrument():
    with pytest.raises(ValueError):
        bias_oracle_2sls(McConfig(), draws=1000)
    with pytest.raises(DegenerateInstrument):
        bias_oracle_2sls(McConfig(pi1=0.0), draws=100_000)


@pytest.mark.slow
@pytest.mark.parametrize("params,reported", [
    (dict(lam=1.0, gamma1=0.0, delta1=0.0, delta2=0.2), 0.387),
    (dict(lam=1.0, gamma1=1.0, delta1=1.0, delta2=0.0), 0.34),
])
def test_bias_oracle_matches_large_sample_2sls(params, reported):
    dgp = McConfig(n=1_000_000, replications=1, seed=11, **params)
    oracle = bias_oracle_2sls(dgp, draws=10_000_000, seed=11, workers=4)
    fit = fit_2sls(simulate_dgp(dgp, 0))
    combined = np.hypot(oracle.mc_standard_error, fit.se[0])
    assert abs((fit.alpha1 - dgp.alpha1) - oracle.bias) < 3 * combined
    assert abs(oracle.bias - reported) < 0.03


def test_2sls_equals_ols_when_the_regressor_instruments_itself(iv_data):
    data = Dataset.from_arrays(y=iv_data.y, d=iv_data.d, z=iv_data.d)
    assert fit_2sls(data).alpha1 == pytest.approx(fit_ols(data).alpha1, rel=1e-10)


def test_bias_oracle_zero_without_endogeneity():
    result = bias_oracle_2sls(McConfig(lam=0.0, gamma1=1.0, delta1=1.0, delta2=0.2), draws=1_000_000, seed=2)
    assert abs(result.bias) < 4 * result.mc_standard_error
