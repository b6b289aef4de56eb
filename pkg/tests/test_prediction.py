import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit

from photodeg import TABLE4
from photodeg.errors import DegeneratePredictionError, DomainError
from photodeg.prediction import (
    _draw_all,
    band_failure_times,
    calibrated_interval,
    draw_spec,
    estimate_group_effects,
    estimate_random_effect,
    predict_path,
    prediction_mse,
)
from photodeg.sim import WeatherSpec, simulate_weather
from photodeg.spectral import CELL_CENTERS
from photodeg.weather import BinnedCovariates, bin_history

from conftest import make_fit


def monochromatic(width_min, hours=2000.0, cell=3, temp_c=30.0, rh=40.0, params=TABLE4):
    """Constant single-cell input reaching half the asymptote near ``hours / 2``, and its closed-form path."""
    n = int(round(hours * 60 / width_min))
    w = width_min / 60.0
    lam = CELL_CENTERS[cell]
    env = params.eta0 - params.ea_over_r / (temp_c + 273.15) - params.beta_rh * (rh - params.rh0) ** 2
    rate = math.exp(-(params.beta_lambda * lam + env)) / (hours / 2)
    raw = np.zeros((n, CELL_CENTERS.size))
    raw[:, cell] = rate * w
    start = np.arange(n) * w
    binned = BinnedCovariates(start, start + w, raw, np.full(n, temp_c), np.full(n, rh), CELL_CENTERS.copy())
    s_star = rate * binned.end_hours * math.exp(params.beta_lambda * lam)
    closed = params.alpha * expit((np.log(s_star) + env) / params.sigma_lambda(lam))
    return binned, closed


@pytest.fixture(scope="module")
def summer():
    return bin_history(simulate_weather(WeatherSpec(n_days=60, cloud_variability=0.3, noise_temp=1.0, seed=4)), 60)


# ---------------------------------------------------------------------------
# predict_path
# ---------------------------------------------------------------------------


def test_zero_dosage_gives_no_damage(backend):
    binned, _ = monochromatic(60, hours=48)
    empty = BinnedCovariates(
        binned.start_hours, binned.end_hours, np.zeros_like(binned.raw_sums), binned.temp_c, binned.rh_pct, binned.centers
    )
    band = predict_path(empty, TABLE4, backend=backend)
    np.testing.assert_array_equal(band.point, 0.0)
    np.testing.assert_array_equal(band.s_star_cum, 0.0)


@pytest.mark.parametrize("width, tol", [(60, 1e-3), (6, 1e-4)])
def test_constant_input_matches_closed_form(width, tol, backend):
    binned, closed = monochromatic(width)
    band = predict_path(binned, TABLE4, backend=backend)
    assert np.max(np.abs(band.point / closed - 1)) < tol


def test_midpoint_rule_converges_away_from_the_first_bin():
    errs = []
    for width in (60, 6):
        binned, closed = monochromatic(width)
        point = predict_path(binned, TABLE4, rule="midpoint").point
        tail = slice(point.size // 10, None)
        errs.append(np.max(np.abs(point[tail] / closed[tail] - 1)))
    assert errs[1] < errs[0] / 3


def test_backends_agree_on_weather(summer):
    from photodeg._accel import HAVE_NUMBA

    if not HAVE_NUMBA:
        pytest.skip("numba disabled")
    for rule in ("exact", "midpoint"):
        a = predict_path(summer, TABLE4, 0.1, rule=rule, backend="numpy").point
        b = predict_path(summer, TABLE4, 0.1, rule=rule, backend="numba").point
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@given(st.integers(0, 1000), st.floats(-0.5, 0.5), st.sampled_from(["exact", "midpoint"]))
def test_paths_monotone_and_bounded(seed, v, rule):
    binned = bin_history(simulate_weather(WeatherSpec(n_days=20, cloud_variability=0.5, noise_temp=2.0, seed=seed)), 60)
    band = predict_path(binned, TABLE4, v, rule=rule)
    assert np.all(np.diff(band.point) <= 0)
    assert np.all(np.abs(band.point) < abs(TABLE4.alpha * math.exp(v)))
    assert np.all(np.diff(band.s_star_cum) >= 0)


def test_random_effect_scales_path(summer):
    base = predict_path(summer, TABLE4).point
    np.testing.assert_allclose(predict_path(summer, TABLE4, 0.3).point, math.exp(0.3) * base, rtol=1e-12)


def test_splitting_bins_into_identical_halves():
    binned, _ = monochromatic(60, hours=500)
    half = BinnedCovariates(
        np.repeat(binned.start_hours, 2) + np.tile([0.0, 0.5], binned.n_bins),
        np.repeat(binned.start_hours, 2) + np.tile([0.5, 1.0], binned.n_bins),
        np.repeat(binned.raw_sums / 2, 2, axis=0),
        np.repeat(binned.temp_c, 2),
        np.repeat(binned.rh_pct, 2),
        binned.centers,
    )
    coarse = predict_path(binned, TABLE4).point
    fine = predict_path(half, TABLE4).point[1::2]
    np.testing.assert_allclose(fine, coarse, rtol=1e-9)


def test_bin_width_refinement_on_weather():
    history = simulate_weather(WeatherSpec(n_days=30, seed=2))
    fine = predict_path(history, TABLE4, bin_minutes=12).point
    coarse = predict_path(history, TABLE4, bin_minutes=60)
    assert coarse.point[-1] == pytest.approx(fine[-1], rel=1e-2)


def test_dosage_doubling_under_reciprocity():
    # with p = 0 only S* matters: doubling every record halves the time to any damage level
    params = TABLE4.with_(p=0.0)
    binned, _ = monochromatic(60, hours=1000)
    doubled = BinnedCovariates(
        binned.start_hours, binned.end_hours, 2 * binned.raw_sums, binned.temp_c, binned.rh_pct, binned.centers
    )
    a = predict_path(binned, params).point
    b = predict_path(doubled, params).point
    np.testing.assert_allclose(b[:499], a[1::2][:499], rtol=1e-12)


def test_empty_history_is_an_error():
    empty = BinnedCovariates(np.zeros(0), np.zeros(0), np.zeros((0, CELL_CENTERS.size)), np.zeros(0), np.zeros(0), CELL_CENTERS)
    with pytest.raises(DomainError):
        predict_path(empty, TABLE4)


# ---------------------------------------------------------------------------
# calibrated_interval
# ---------------------------------------------------------------------------


def test_interval_collapses_without_uncertainty(summer):
    fit = make_fit(TABLE4.with_(sigma_v=0.0), se_scale=0.0)
    band = calibrated_interval(summer, fit, B=1000)
    np.testing.assert_array_equal(band.lower, band.point)
    np.testing.assert_array_equal(band.upper, band.point)


def test_pit_uniform_with_zero_covariance():
    spec = draw_spec(make_fit(TABLE4, se_scale=0.0))
    B = 5000
    _, sig, vs, redraws = _draw_all(spec, 11, B, 1)
    assert redraws == 0
    w = stats.norm.cdf(-vs / sig)
    assert stats.kstest(w, "uniform").statistic < 1.36 / math.sqrt(B)


def test_zero_covariance_band_is_the_random_effect_band(summer):
    band = calibrated_interval(summer, make_fit(TABLE4, se_scale=0.0), B=20000, seed=3)
    z = stats.norm.ppf(0.975)
    np.testing.assert_allclose(band.lower, band.point * math.exp(TABLE4.sigma_v * z), rtol=0.03)
    np.testing.assert_allclose(band.upper, band.point * math.exp(-TABLE4.sigma_v * z), rtol=0.03)


def test_band_ordering_and_nesting(summer):
    fit = make_fit(TABLE4)
    b95 = calibrated_interval(summer, fit, level=0.95, B=2000, seed=1)
    b99 = calibrated_interval(summer, fit, level=0.99, B=2000, seed=1)
    assert np.all(b95.lower <= b95.point) and np.all(b95.point <= b95.upper)
    assert np.all(b99.lower <= b95.lower) and np.all(b95.upper <= b99.upper)


def test_seed_determinism_across_thread_counts(summer):
    fit = make_fit(TABLE4)
    a = calibrated_interval(summer, fit, B=3000, seed=9, n_jobs=1)
    b = calibrated_interval(summer, fit, B=3000, seed=9, n_jobs=4)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert a.meta == b.meta
    c = calibrated_interval(summer, fit, B=3000, seed=10)
    assert not np.array_equal(a.lower, c.lower)


def test_analytic_and_simulated_pit_agree(summer):
    fit = make_fit(TABLE4)
    times = summer.end_hours[[200, 700, -1]]
    a = calibrated_interval(summer, fit, B=1000, seed=2, times=times)
    s = calibrated_interval(summer, fit, B=1000, seed=2, times=times, method="simulate", n_jobs=2)
    np.testing.assert_allclose(s.lower, a.lower, rtol=0.02)
    np.testing.assert_allclose(s.upper, a.upper, rtol=0.02)


def test_interval_argument_checks(summer):
    fit = make_fit(TABLE4)
    with pytest.raises(DomainError):
        calibrated_interval(summer, fit, B=999)
    with pytest.raises(DomainError):
        calibrated_interval(summer, fit, level=1.0, B=1000)
    with pytest.raises(DomainError):
        calibrated_interval(summer, fit, B=1000, times=[0.5])


def test_invalid_draws_are_redrawn_and_reported(summer):
    # a sigma0 SE of the size of the estimate makes many draws invalid
    fit = make_fit(TABLE4)
    fit.full_covariance[8, 8] = TABLE4.sigma0**2
    with pytest.warns(RuntimeWarning, match="redrawn"):
        band = calibrated_interval(summer, fit, B=1000, seed=0)
    assert band.meta["redraws"] > 0


# ---------------------------------------------------------------------------
# random-effect adjustment
# ---------------------------------------------------------------------------

PRED = -np.linspace(0.01, 0.3, 14)


def test_estimate_random_effect_examples():
    assert estimate_random_effect(PRED, PRED) == 0.0
    measured = PRED.copy()
    measured[4:10] *= 2
    assert math.exp(estimate_random_effect(measured, PRED)) == pytest.approx(2.0, rel=1e-14)


@given(st.floats(0.01, 100.0), st.integers(0, 2**31))
def test_estimate_random_effect_scale_equivariant(c, seed):
    measured = PRED * np.exp(np.random.default_rng(seed).normal(0, 0.1, PRED.size))
    v = estimate_random_effect(measured, PRED)
    assert estimate_random_effect(c * measured, PRED) == pytest.approx(v + math.log(c), abs=1e-12)


def test_estimate_random_effect_noisy_recovery():
    rng = np.random.default_rng(0)
    for _ in range(20):
        measured = math.exp(0.3) * PRED + TABLE4.sigma_eps * rng.standard_normal(PRED.size)
        assert abs(estimate_random_effect(measured, PRED) - 0.3) < 0.1


def test_estimate_random_effect_errors():
    with pytest.raises(DegeneratePredictionError):
        estimate_random_effect(PRED, np.zeros_like(PRED))
    with pytest.raises(DomainError):
        estimate_random_effect(PRED[:9], PRED[:9])
    with pytest.warns(RuntimeWarning):
        assert estimate_random_effect(-PRED, PRED) == 0.0


def test_group_effects_pool_windows():
    u = 0.2
    pairs = [(math.exp(u) * PRED, PRED), (math.exp(u) * 2 * PRED, 2 * PRED)]
    effects = estimate_group_effects({"g": pairs}, 0.05, 0.05, 0.01)
    got_u, ws = effects["g"]
    assert got_u == pytest.approx(u, abs=1e-12)
    np.testing.assert_allclose(ws, 0.0, atol=1e-12)


def test_group_effects_shrink_specimen_deviation():
    pairs = [(math.exp(0.1) * PRED, PRED), (math.exp(-0.1) * PRED, PRED)]
    _, ws = estimate_group_effects({"g": pairs}, 0.05, 0.05, 0.01)["g"]
    assert 0 < ws[0] < 0.1 + 1e-12 and -0.1 - 1e-12 < ws[1] < 0
    _, none = estimate_group_effects({"g": pairs}, 0.05, 0.0, 0.01)["g"]
    assert none == [0.0, 0.0]


def test_prediction_mse_examples():
    assert prediction_mse([(PRED, PRED)]) == 0.0
    assert prediction_mse([(PRED + 0.03, PRED), (PRED[:3] - 0.03, PRED[:3])]) == pytest.approx(0.0009, rel=1e-12)
    with pytest.raises(DomainError):
        prediction_mse([])


# ---------------------------------------------------------------------------
# failure times
# ---------------------------------------------------------------------------


def test_band_failure_times_order(summer):
    params = TABLE4.with_(eta0=TABLE4.eta0 + 3.0)
    band = calibrated_interval(summer, make_fit(params), B=2000, seed=0)
    f = band_failure_times(band, specimen_id="x")
    assert f.specimen_id == "x"
    assert f.lower is not None and f.point is not None
    assert f.upper is None or f.lower <= f.point <= f.upper
    assert f.lower <= f.point


def test_band_failure_times_never_reached(summer):
    band = predict_path(summer, TABLE4.with_(eta0=TABLE4.eta0 - 5.0))
    f = band_failure_times(band)
    assert f.point is None and f.lower is None and f.upper is None
