import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from photodeg import TABLE4
from photodeg.config import OUTPUT_ENV, RunConfig, build_config
from photodeg.errors import ConfigurationError, ValidationError
from photodeg.io import (
    COVARIATE_HEADER,
    FORMAT_VERSION,
    MEASUREMENT_HEADER,
    SPECIMEN_HEADER,
    emit_accel,
    emit_covariates,
    fit_document,
    fmt,
    ingest_accel,
    ingest_covariates,
    load_fit,
    read_id_list,
    write_csv,
    write_json,
)
from photodeg.sim import AccelDesign, DesignCell, WeatherSpec, simulate_accel, simulate_weather

from conftest import make_fit


@pytest.fixture(scope="module")
def small_ds():
    cells = tuple(DesignCell(bp, 1.0, 35.0, 25.0, 2) for bp in (306, 452))
    return simulate_accel(AccelDesign(cells=cells, schedule=84.0 * np.arange(1, 6), seed=1), TABLE4)


def _assert_same_dataset(a, b):
    assert [s.id for s in a] == [s.id for s in b]
    for sa, sb in zip(a, b):
        assert sa.conditions == sb.conditions
        assert sa.group_id == sb.group_id
        np.testing.assert_allclose(sb.times, sa.times, rtol=1e-12)
        np.testing.assert_allclose(sb.y, sa.y, rtol=1e-11)
        np.testing.assert_allclose(sb.dosage.cumulative, sa.dosage.cumulative, rtol=1e-11)


# ---------------------------------------------------------------------------
# accelerated data
# ---------------------------------------------------------------------------


def test_accel_round_trip(small_ds, tmp_path):
    emit_accel(small_ds, tmp_path / "a", meta={"seed": 1})
    back = ingest_accel(tmp_path / "a")
    _assert_same_dataset(small_ds, back)
    assert back.cleaning[small_ds.specimens[0].id]["measurement_rows"] == 5
    # emitting the parsed dataset reproduces the files byte for byte
    emit_accel(back, tmp_path / "b", meta={"seed": 1})
    for name in ("specimens.csv", "measurements.csv", "dosage.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_artifacts_embed_version_and_config(small_ds, tmp_path):
    emit_accel(small_ds, tmp_path, meta={"seed": 7, "model": "B"})
    head = (tmp_path / "specimens.csv").read_text().splitlines()[:2]
    assert head[0] == f"# photodeg format_version={FORMAT_VERSION}"
    assert json.loads(head[1].split("=", 1)[1]) == {"model": "B", "seed": 7}


def _two_specimen_fixture(tmp_path, meas_rows):
    write_csv(tmp_path / "specimens.csv", SPECIMEN_HEADER, [["a", "g", 306, 1.0, 35.0, 25.0], ["b", "g", 452, 0.4, 45.0, 50.0]])
    write_csv(tmp_path / "measurements.csv", MEASUREMENT_HEADER, meas_rows)
    write_csv(
        tmp_path / "dosage.csv",
        ["specimen_id", "time_h", "cum_dosage"],
        [["a", 0.0, 0.0], ["a", 500.0, 10.0], ["b", 0.0, 0.0], ["b", 500.0, 3.0]],
    )
    return tmp_path


def test_well_formed_two_specimen_fixture(tmp_path):
    ds = ingest_accel(_two_specimen_fixture(tmp_path, [["a", 10, -0.01], ["a", 20, -0.02], ["b", 10, -0.005]]))
    assert len(ds) == 2
    assert ds.by_id("b").conditions.nd == 0.4


def test_decreasing_times_name_specimen_and_line(tmp_path):
    _two_specimen_fixture(tmp_path, [["a", 10, -0.01], ["a", 20, -0.02], ["b", 30, -0.005], ["b", 25, -0.006]])
    with pytest.raises(ValidationError) as err:
        ingest_accel(tmp_path)
    # line 1 is the version comment and line 2 the header, so data rows start at line 3
    assert err.value.line == 6
    assert "specimen b" in str(err.value)


def test_duplicate_specimen_ids(tmp_path):
    _two_specimen_fixture(tmp_path, [["a", 10, -0.01]])
    write_csv(tmp_path / "specimens.csv", SPECIMEN_HEADER, [["a", "", 306, 1.0, 35.0, 25.0], ["a", "", 306, 1.0, 35.0, 25.0]])
    with pytest.raises(ValidationError, match="duplicate") as err:
        ingest_accel(tmp_path)
    assert err.value.line == 4


@pytest.mark.parametrize(
    "row, message",
    [(["a", "x", -0.1], "not a number"), (["a", "", -0.1], "empty"), (["zz", 10, -0.1], "not listed")],
)
def test_malformed_measurement_rows(tmp_path, row, message):
    _two_specimen_fixture(tmp_path, [["b", 10, -0.01], row])
    with pytest.raises(ValidationError, match=message) as err:
        ingest_accel(tmp_path)
    assert err.value.line == 4


def test_wrong_header_and_missing_file(tmp_path):
    write_csv(tmp_path / "specimens.csv", ["id"], [["a"]])
    with pytest.raises(ValidationError, match="header"):
        ingest_accel(tmp_path)
    with pytest.raises(ValidationError, match="not found"):
        ingest_accel(tmp_path / "missing")


def test_read_id_list(tmp_path):
    (tmp_path / "ids.txt").write_text("# excluded\na\n\nb  # two segments\n")
    assert read_id_list(tmp_path / "ids.txt") == ["a", "b"]


# ---------------------------------------------------------------------------
# covariates
# ---------------------------------------------------------------------------


def test_covariate_round_trip_with_missing_values(tmp_path):
    h = simulate_weather(WeatherSpec(n_days=2, noise_temp=1.0, missing_fraction=0.01, seed=3, specimen_id="s1"))
    emit_covariates(h, tmp_path / "covariates_s1.csv")
    back = ingest_covariates(tmp_path / "covariates_s1.csv")
    assert back.specimen_id == "s1"
    np.testing.assert_array_equal(back.timestamps, h.timestamps)
    np.testing.assert_allclose(back.temp_c, h.temp_c, rtol=1e-11, equal_nan=True)
    np.testing.assert_allclose(back.dosage, h.dosage, rtol=1e-11, equal_nan=True)
    np.testing.assert_array_equal(np.isnan(back.rh_pct), np.isnan(h.rh_pct))
    assert len(COVARIATE_HEADER) == 3 + 117


def test_covariate_errors_carry_line_numbers(tmp_path):
    h = simulate_weather(WeatherSpec(n_days=1))
    path = tmp_path / "covariates_x.csv"
    emit_covariates(h, path)
    lines = path.read_text().splitlines()
    fields = lines[10].split(",")
    fields[5] = "-1"
    lines[10] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="negative") as err:
        ingest_covariates(path)
    assert err.value.line == 11


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_float_format_round_trips_to_twelve_digits(x):
    text = fmt(x)
    assert float(text) == pytest.approx(x, rel=5e-12, abs=1e-300)
    assert fmt(float(text)) == text


# ---------------------------------------------------------------------------
# fit documents and configuration
# ---------------------------------------------------------------------------


def test_fit_document_round_trip(tmp_path):
    fit = make_fit(TABLE4)
    write_json(tmp_path / "fit.json", fit_document(fit), meta={"seed": 0})
    back = load_fit(tmp_path / "fit.json")
    assert back.params == fit.params
    np.testing.assert_allclose(back.full_covariance, fit.full_covariance, rtol=1e-15)
    assert back.names == fit.names


def test_config_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "run.ini"
    ini.write_text("[photodeg]\nseed = 4\nlevel = 0.9\nB = 2000\n")
    cfg = build_config("fit", {"seed": 11, "level": None}, ini)
    assert (cfg.seed, cfg.level, cfg.B, cfg.model) == (11, 0.9, 2000, "B")
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(cfg.output_dir) == "photodeg_out"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert cfg.output_dir == tmp_path / "env"
    assert build_config("fit", {"out": "flag"}).output_dir.name == "flag"


@pytest.mark.parametrize(
    "changes",
    [{"level": 1.0}, {"B": 999}, {"bin_min": 50}, {"threshold": -0.7}, {"model": "D"}, {"quad_order": 3}],
)
def test_config_validation(changes):
    with pytest.raises(ConfigurationError):
        RunConfig(**changes)


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[photodeg]\nunknown = 1\n")
    with pytest.raises(ConfigurationError):
        build_config("fit", {}, bad)
    bad.write_text("[photodeg]\nseed = x\n")
    with pytest.raises(ConfigurationError):
        build_config("fit", {}, bad)
