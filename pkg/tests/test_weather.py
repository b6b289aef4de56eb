import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from photodeg.errors import ConfigurationError, ImputationError, MissingDataError
from photodeg.sim import WeatherSpec, simulate_weather
from photodeg.spectral import CELL_CENTERS
from photodeg.weather import CovariateHistory, bin_history, impute_covariates, incremental_effective_dosage


def _history(n, dosage=None, temp=None, rh=None, start="2003-01-01T00:00", night=None):
    ts = np.datetime64(start, "m") + np.arange(n) * np.timedelta64(12, "m")
    dosage = np.ones((n, CELL_CENTERS.size)) if dosage is None else dosage
    temp = np.full(n, 20.0) if temp is None else temp
    rh = np.full(n, 50.0) if rh is None else rh
    return CovariateHistory(ts, temp, rh, dosage, specimen_id="x", night=night)


# ---------------------------------------------------------------------------
# incremental_effective_dosage / bin_history
# ---------------------------------------------------------------------------


def test_constant_rate_five_records_per_bin():
    r = 0.37
    h = _history(50, dosage=np.full((50, CELL_CENTERS.size), r))
    inc = incremental_effective_dosage(h, 0.0, 60)
    np.testing.assert_allclose(inc.delta, 5 * r, rtol=1e-14)
    assert inc.delta.shape == (10, CELL_CENTERS.size)


def test_night_records_give_zero_increment():
    h = simulate_weather(WeatherSpec(n_days=2))
    inc = incremental_effective_dosage(h, -0.03, 60)
    hour_of_day = inc.start_hours % 24
    night = (hour_of_day < 6) | (hour_of_day >= 18)
    assert np.all(inc.delta[night] == 0.0)
    assert np.all(inc.delta[~night].sum(axis=1) > 0)


def test_bin_sums_match_record_by_record_accumulation():
    h = simulate_weather(WeatherSpec(n_days=3, cloud_variability=0.4, noise_temp=1.0, noise_rh=2.0, seed=3))
    beta = -0.0297
    inc = incremental_effective_dosage(h, beta, 60)
    brute = np.zeros_like(inc.delta)
    temp = np.zeros(inc.delta.shape[0])
    for i in range(len(h)):
        k = i // 5
        for c, lam in enumerate(h.centers):
            brute[k, c] += h.dosage[i, c] * np.exp(beta * lam)
        temp[k] += h.temp_c[i] / 5
    np.testing.assert_allclose(inc.delta, brute, rtol=1e-12)
    np.testing.assert_allclose(inc.temp_c, temp, rtol=1e-12)
    assert inc.as_map(12)[300.0] == inc.delta[12, 0]


def test_non_aligned_bin_is_configuration_error():
    with pytest.raises(ConfigurationError):
        bin_history(_history(10), 30)


def test_binning_refuses_missing_values():
    h = _history(10, temp=np.r_[np.full(9, 20.0), np.nan])
    with pytest.raises(MissingDataError):
        bin_history(h, 60)


def test_binning_refuses_gaps():
    ts = np.datetime64("2003-01-01T00:00", "m") + np.r_[np.arange(5), np.arange(6, 11)] * np.timedelta64(12, "m")
    h = CovariateHistory(ts, np.full(10, 1.0), np.full(10, 1.0), np.ones((10, CELL_CENTERS.size)))
    with pytest.raises(MissingDataError):
        bin_history(h, 60)


@given(st.integers(1, 60), st.sampled_from([12, 24, 60, 120, 360]), st.integers(0, 2**31))
def test_binning_conserves_dosage(n, width, seed):
    dosage = np.random.default_rng(seed).exponential(size=(n, CELL_CENTERS.size))
    b = bin_history(_history(n, dosage=dosage), width)
    assert b.raw_sums.sum() == pytest.approx(dosage.sum(), rel=1e-9)
    assert b.end_hours[-1] == pytest.approx(n * 0.2)


# ---------------------------------------------------------------------------
# impute_covariates
# ---------------------------------------------------------------------------


def test_imputation_identity_without_gaps():
    h = _history(20)
    assert impute_covariates(h) is h


def test_imputation_same_time_of_day_mean():
    per_day = 120
    n = 3 * per_day
    rh = np.full(n, 60.0)
    rh[10] = 40.0
    rh[2 * per_day + 10] = 50.0
    rh[per_day + 10] = np.nan
    out = impute_covariates(_history(n, rh=rh))
    assert out.rh_pct[per_day + 10] == pytest.approx(45.0)
    assert out.missing_fraction() == 0.0


def test_imputation_night_dosage_is_zero():
    per_day = 120
    n = 3 * per_day
    dosage = np.ones((n, CELL_CENTERS.size))
    dosage[per_day + 1] = np.nan
    night = np.zeros(n, dtype=bool)
    night[per_day + 1] = True
    out = impute_covariates(_history(n, dosage=dosage, night=night))
    assert np.all(out.dosage[per_day + 1] == 0.0)


def test_imputation_fails_without_donors():
    per_day = 120
    n = 40 * per_day
    temp = np.full(n, 10.0)
    # same clock time missing on every day within two weeks either side of day 20
    for d in range(5, 36):
        temp[d * per_day + 7] = np.nan
    with pytest.raises(ImputationError) as err:
        impute_covariates(_history(n, temp=temp), max_missing_fraction=0.05)
    assert err.value.timestamps


def test_imputation_cap_on_missing_fraction():
    temp = np.full(100, 10.0)
    temp[:10] = np.nan
    with pytest.raises(MissingDataError):
        impute_covariates(_history(100, temp=temp))


def test_weather_missingness_is_restored():
    h = simulate_weather(WeatherSpec(n_days=60, missing_fraction=0.0032, seed=11))
    assert 0.003 < h.missing_fraction() < 0.0035
    out = impute_covariates(h)
    assert out.missing_fraction() == 0.0
    assert np.all(out.dosage >= 0)
    bin_history(out, 60)
