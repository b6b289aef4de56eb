"""Synthetic accelerated-test designs, outdoor weather and outdoor specimens.

Every random stream is keyed by ``(seed, crc32(label))`` through a Philox
generator, so results do not depend on generation order or thread count.
"""
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .categorical import CategoricalParams, categorical_terms
from .data import AccelDataset, Specimen
from .errors import DomainError
from .likelihood import combined_terms, mean_paths, stack
from .path import CombinedParams, ExposureConditions
from .prediction import predict_path
from .spectral import CELL_CENTERS, DosageSeries, default_splits
from .weather import RAW_INTERVAL_MIN, CovariateHistory


def stream(seed, label):
    """Independent generator for ``label`` under ``seed``."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | (zlib.crc32(str(label).encode()) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class DesignCell:
    bp: int
    nd: float
    temp_c: float
    rh: float
    n_replicates: int = 4

    def __post_init__(self):
        if self.n_replicates < 1:
            raise DomainError("a design cell needs at least one replicate")

    @property
    def label(self):
        return f"B{self.bp}-N{round(self.nd * 100):03d}-T{self.temp_c:g}-H{self.rh:g}"


@dataclass(frozen=True)
class AccelDesign:
    """Constant-condition laboratory design.

    ``dosage_rates`` maps a band-pass filter to the dosage accumulated per
    hour without ND attenuation; ``None`` picks rates giving
    half-degradation after ``t_half_h`` hours at ND 100 %, 35 C and 25 % RH
    under the simulation truth.
    """

    cells: tuple
    schedule: np.ndarray = field(default_factory=lambda: 84.0 * np.arange(1, 49))
    dosage_rates: dict = None
    t_half_h: float = 900.0
    sigma_v: float = 0.1
    sigma_eps: float = 0.01
    sigma_group: float = 0.0
    seed: int = 0
    dosage_step_h: float = 12.0

    def __post_init__(self):
        sched = np.asarray(self.schedule, dtype=float)
        if sched.ndim != 1 or sched.size == 0 or np.any(np.diff(sched) <= 0) or sched[0] < 0:
            raise DomainError("schedule must be nonempty, nonnegative and strictly increasing")
        object.__setattr__(self, "schedule", sched)
        object.__setattr__(self, "cells", tuple(self.cells))

    @property
    def n_specimens(self):
        return sum(c.n_replicates for c in self.cells)


def table2_cells():
    """The 80 laboratory combinations; the last 55 C / 75 % / 452 nm / 10 % cell has three replicates."""
    bps = (306, 326, 353, 452)
    nds = (0.10, 0.40, 0.60, 1.00)
    cells = []
    all_nd = {(25, 0), (35, 0), (45, 75), (55, 75)}
    for temp, rh in [(25, 0), (35, 0), (35, 25), (35, 50), (45, 25), (45, 50), (45, 75), (55, 75)]:
        levels = nds if (temp, rh) in all_nd else (1.00,)
        for bp in bps:
            for nd in levels:
                cells.append(DesignCell(bp, nd, float(temp), float(rh), 4))
    last = cells[-1]
    cells[-1] = DesignCell(last.bp, last.nd, last.temp_c, last.rh, 3)
    return tuple(cells)


def table2_design(**kw):
    return AccelDesign(cells=table2_cells(), **kw)


def _reference_offsets(truth, splits):
    """Offset of the standardised dosage at ND 100 %, 35 C, 25 % RH per band."""
    out = {}
    for bp in (306, 326, 353, 452):
        if isinstance(truth, CategoricalParams):
            out[bp] = truth.offset(bp, 1.0, 35.0, 25.0)
        else:
            spectral = truth.b353 if bp == 353 else splits[bp].log_weight(truth.beta_lambda)
            out[bp] = spectral + float(truth.environment_term(35.0, 25.0, 1.0))
    return out


def design_rates(design, truth, splits=None):
    if design.dosage_rates is not None:
        return dict(design.dosage_rates)
    splits = default_splits() if splits is None else splits
    return {bp: math.exp(-off) / design.t_half_h for bp, off in _reference_offsets(truth, splits).items()}


def simulate_accel(design, truth, splits=None):
    """Noisy degradation paths for every specimen of ``design``.

    ``truth`` may be combined or categorical parameters.  Specimen effects
    are N(0, design.sigma_v^2); with ``design.sigma_group > 0`` every cell
    also shares a N(0, sigma_group^2) effect.  The design's noise settings
    override those stored in ``truth``.
    """
    splits = default_splits() if splits is None else splits
    rates = design_rates(design, truth, splits)
    t_end = design.schedule[-1]
    specimens = []
    for cell in design.cells:
        cond = ExposureConditions(cell.bp, cell.nd, cell.temp_c, cell.rh)
        series = DosageSeries.linear(rates[cell.bp] * cell.nd, t_end, design.dosage_step_h)
        for r in range(cell.n_replicates):
            sid = f"{cell.label}-r{r + 1}"
            specimens.append(
                Specimen(sid, cond, design.schedule, np.zeros(design.schedule.size), series, group_id=cell.label)
            )
    ds = AccelDataset(tuple(specimens), splits=splits)
    data = stack(ds)
    if isinstance(truth, CategoricalParams):
        alpha, offsets, sigmas = categorical_terms(truth, data)
    elif isinstance(truth, CombinedParams):
        alpha, offsets, sigmas = combined_terms(truth, data, splits)
    else:
        raise DomainError("truth must be CombinedParams or CategoricalParams")
    m = mean_paths(data, alpha, offsets, sigmas)
    out = []
    for i, s in enumerate(specimens):
        rng = stream(design.seed, s.id)
        v = design.sigma_v * rng.standard_normal()
        eps = design.sigma_eps * rng.standard_normal(s.n)
        if design.sigma_group > 0:
            v += design.sigma_group * stream(design.seed, "group:" + s.group_id).standard_normal()
        mi = m[data.starts[i] : data.ends[i]]
        y = mi * math.exp(v) + eps if (v != 0.0 or design.sigma_eps > 0) else mi.copy()
        out.append(Specimen(s.id, s.conditions, s.times, y, s.dosage, s.group_id))
    return AccelDataset(tuple(out), splits=splits)


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------


def outdoor_spectrum(centers=CELL_CENTERS):
    """Relative solar UV-visible dosage per 2 nm cell (cut-on near 300 nm, flat beyond 400 nm)."""
    c = np.asarray(centers, dtype=float)
    cut = 1.0 / (1.0 + np.exp(-(c - 310.0) / 4.0))
    rise = np.minimum(1.0, 0.35 + (c - 300.0) / 150.0)
    return cut * rise


@dataclass(frozen=True)
class WeatherSpec:
    """Synthetic weather generator settings.

    UV follows a half-sine between ``sunrise_h`` and ``sunset_h`` whose
    peak varies seasonally as ``1 + seasonal_amplitude * cos(2 pi (day -
    peak_day) / 365)``; temperature and RH follow daily and seasonal
    sinusoids plus optional Gaussian noise.  ``peak_dosage`` is the total
    dosage over all cells in a 12-minute record at the seasonal peak.
    """

    start: str = "2002-06-01"
    n_days: int = 120
    peak_dosage: float = 1.0
    sunrise_h: float = 6.0
    sunset_h: float = 18.0
    seasonal_amplitude: float = 0.5
    peak_day: float = 172.0
    cloud_variability: float = 0.0
    temp_mean: float = 15.0
    temp_daily_amp: float = 6.0
    temp_seasonal_amp: float = 10.0
    rh_mean: float = 60.0
    rh_daily_amp: float = 15.0
    rh_seasonal_amp: float = 5.0
    noise_temp: float = 0.0
    noise_rh: float = 0.0
    missing_fraction: float = 0.0
    seed: int = 0
    specimen_id: str = ""

    def __post_init__(self):
        if self.n_days < 1:
            raise DomainError("n_days must be at least 1")
        if not 0 <= self.sunrise_h < self.sunset_h <= 24:
            raise DomainError("daylight window must satisfy 0 <= sunrise < sunset <= 24")
        if not 0 <= self.seasonal_amplitude < 1:
            raise DomainError("seasonal amplitude must lie in [0, 1)")


def simulate_weather(spec):
    """12-minute covariate records for ``spec.n_days`` days."""
    per_day = 24 * 60 // RAW_INTERVAL_MIN
    n = spec.n_days * per_day
    start = np.datetime64(spec.start, "m")
    ts = start + np.arange(n) * np.timedelta64(RAW_INTERVAL_MIN, "m")
    minutes = (ts - ts.astype("datetime64[D]")).astype(np.int64)
    hour_mid = (minutes + RAW_INTERVAL_MIN / 2.0) / 60.0
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]")).astype(np.int64) + 1
    season = np.cos(2 * np.pi * (doy - spec.peak_day) / 365.0)
    day_len = spec.sunset_h - spec.sunrise_h
    phase = (hour_mid - spec.sunrise_h) / day_len
    night = (phase <= 0) | (phase >= 1)
    diurnal = np.where(night, 0.0, np.sin(np.pi * np.clip(phase, 0, 1)))
    rng = stream(spec.seed, "weather:" + spec.specimen_id)
    day_index = np.arange(n) // per_day
    if spec.cloud_variability > 0:
        cloud = 1.0 - spec.cloud_variability * rng.random(spec.n_days)
        cloud = cloud[day_index]
    else:
        cloud = 1.0
    intensity = spec.peak_dosage * (1.0 + spec.seasonal_amplitude * season) * diurnal * cloud
    shape = outdoor_spectrum()
    shape = shape / shape.sum()
    dosage = intensity[:, None] * shape[None, :]
    daily = np.sin(2 * np.pi * (hour_mid - 9.0) / 24.0)
    temp = spec.temp_mean + spec.temp_seasonal_amp * season + spec.temp_daily_amp * daily
    rh = spec.rh_mean - spec.rh_seasonal_amp * season - spec.rh_daily_amp * daily
    if spec.noise_temp > 0:
        temp = temp + spec.noise_temp * rng.standard_normal(n)
    if spec.noise_rh > 0:
        rh = rh + spec.noise_rh * rng.standard_normal(n)
    temp = np.clip(temp, -40.0, 100.0)
    rh = np.clip(rh, 0.0, 100.0)
    if spec.missing_fraction > 0:
        k = int(round(spec.missing_fraction * n))
        miss = rng.choice(n, size=k, replace=False)
        temp[miss] = np.nan
        rh[miss] = np.nan
        dosage[miss] = np.nan
    return CovariateHistory(ts, temp, rh, dosage, specimen_id=spec.specimen_id, night=night)


# ---------------------------------------------------------------------------
# outdoor specimens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutdoorSpecimen:
    """Measured outdoor path; ``latent`` is the noise-free damage at the same times."""

    id: str
    times: np.ndarray
    timestamps: np.ndarray
    y: np.ndarray
    latent: np.ndarray
    v: float
    group_id: str = ""

    @property
    def n(self):
        return self.y.size


def measurement_hours(total_hours, pattern=(3, 4)):
    """Measurement times alternating every ``pattern`` days, within ``total_hours``."""
    out = []
    t = 0.0
    k = 0
    while True:
        t += 24.0 * pattern[k % len(pattern)]
        if t > total_hours + 1e-9:
            break
        out.append(t)
        k += 1
    return np.array(out)


def simulate_outdoor(history, truth, seed, v=None, sigma_eps=None, bin_minutes=60, rule="exact", specimen_id=None):
    """Noisy outdoor measurements every three to four days.

    ``v`` defaults to a N(0, truth.total_sigma_v^2) draw from the specimen's
    stream; ``sigma_eps`` defaults to ``truth.sigma_eps``.  The noise-free
    path comes from ``predict_path``.
    """
    sid = specimen_id if specimen_id is not None else (history.specimen_id or "outdoor")
    rng = stream(seed, sid)
    z = rng.standard_normal()
    if v is None:
        v = truth.total_sigma_v * z
    sigma_eps = truth.sigma_eps if sigma_eps is None else sigma_eps
    band = predict_path(history, truth, v, bin_minutes=bin_minutes, rule=rule)
    hours = measurement_hours(band.times[-1])
    idx = band.at(hours)
    latent = band.point[idx]
    y = latent + sigma_eps * rng.standard_normal(idx.size) if sigma_eps > 0 else latent.copy()
    stamps = None if band.timestamps is None else band.timestamps[idx]
    return OutdoorSpecimen(sid, band.times[idx], stamps, y, latent, float(v))
