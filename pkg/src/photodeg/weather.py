"""Outdoor covariate histories: validation, gap filling and hourly binning."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError, ImputationError, MissingDataError
from .spectral import CELL_CENTERS

RAW_INTERVAL_MIN = 12


@dataclass(frozen=True)
class CovariateHistory:
    """Time-ordered weather records for one outdoor specimen.

    Each record covers ``raw_interval_min`` minutes starting at its time
    stamp.  ``dosage`` has one column per 2 nm cell (``centers``) and holds
    the dosage received during the record.  Missing values are NaN.
    """

    timestamps: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray
    dosage: np.ndarray
    specimen_id: str = ""
    centers: np.ndarray = field(default_factory=lambda: CELL_CENTERS.copy())
    night: np.ndarray = None
    raw_interval_min: int = RAW_INTERVAL_MIN

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        temp = np.asarray(self.temp_c, dtype=float)
        rh = np.asarray(self.rh_pct, dtype=float)
        dos = np.atleast_2d(np.asarray(self.dosage, dtype=float))
        centers = np.asarray(self.centers, dtype=float)
        n = ts.size
        if n == 0:
            raise DomainError("empty covariate history")
        if temp.shape != (n,) or rh.shape != (n,) or dos.shape != (n, centers.size):
            raise DomainError("covariate arrays do not match the number of records / wavelength cells")
        if n > 1 and np.any(np.diff(ts).astype(np.int64) <= 0):
            raise DomainError("time stamps must be strictly increasing")
        if np.any(dos[np.isfinite(dos)] < 0):
            raise DomainError("dosage values must be nonnegative")
        night = None if self.night is None else np.asarray(self.night, dtype=bool)
        if night is not None and night.shape != (n,):
            raise DomainError("night mask must have one flag per record")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "temp_c", temp)
        object.__setattr__(self, "rh_pct", rh)
        object.__setattr__(self, "dosage", dos)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "night", night)

    def __len__(self):
        return self.timestamps.size

    @property
    def hours(self):
        """Record start times in hours since the first record."""
        return (self.timestamps - self.timestamps[0]).astype(np.int64) / 60.0

    def missing_mask(self):
        return ~np.isfinite(self.temp_c) | ~np.isfinite(self.rh_pct) | ~np.all(np.isfinite(self.dosage), axis=1)

    def missing_fraction(self):
        """Fraction of records with at least one missing value."""
        return float(self.missing_mask().mean())

    def scaled(self, factor):
        """Copy with every dosage record multiplied by ``factor``."""
        return replace(self, dosage=self.dosage * factor)


def _fill(values, keys, minutes, window_min, fixed_zero=None):
    """Same-time-of-day mean imputation of one column; returns (filled, failed idx)."""
    values = values.copy()
    miss = np.flatnonzero(~np.isfinite(values))
    if miss.size == 0:
        return values, []
    observed = np.isfinite(values)
    failed = []
    groups = {}
    for i in miss:
        if fixed_zero is not None and fixed_zero[i]:
            values[i] = 0.0
            continue
        k = keys[i]
        if k not in groups:
            groups[k] = np.flatnonzero(keys == k)
        idx = groups[k]
        t = minutes[idx]
        lo = np.searchsorted(t, minutes[i] - window_min, side="left")
        hi = np.searchsorted(t, minutes[i] + window_min, side="right")
        cand = idx[lo:hi]
        cand = cand[observed[cand]]
        if cand.size == 0:
            failed.append(i)
        else:
            values[i] = values[cand].mean()
    return values, failed


def impute_covariates(history, max_window_days=14.0, max_missing_fraction=0.05):
    """Fill gaps with the mean of observed values at the same time of day.

    Donors are records at the same clock time within ``max_window_days`` of
    the gap.  Dosage gaps flagged as nighttime (``history.night``) are set to
    zero.  Donor means use only originally observed values, so the result
    does not depend on the order in which gaps are visited.
    """
    frac = history.missing_fraction()
    if frac > max_missing_fraction:
        raise MissingDataError(
            f"{100 * frac:.3f}% of records have missing values, above the {100 * max_missing_fraction:.3f}% cap"
        )
    if frac == 0.0:
        return history
    minutes = history.timestamps.astype(np.int64)
    keys = minutes % (24 * 60)
    window = int(round(max_window_days * 24 * 60))
    failed = set()
    temp, f = _fill(history.temp_c, keys, minutes, window)
    failed.update(f)
    rh, f = _fill(history.rh_pct, keys, minutes, window)
    failed.update(f)
    dosage = history.dosage.copy()
    bad_cols = np.flatnonzero(~np.all(np.isfinite(dosage), axis=0))
    for c in bad_cols:
        dosage[:, c], f = _fill(dosage[:, c], keys, minutes, window, fixed_zero=history.night)
        failed.update(f)
    if failed:
        stamps = [str(history.timestamps[i]) for i in sorted(failed)]
        shown = ", ".join(stamps[:10]) + (" ..." if len(stamps) > 10 else "")
        raise ImputationError(f"no donor observations within the window for {len(stamps)} records: {shown}", stamps)
    return replace(history, temp_c=temp, rh_pct=rh, dosage=dosage)


@dataclass(frozen=True)
class BinnedCovariates:
    """Covariates aggregated to coarser bins.

    ``raw_sums[k, c]`` is the total dosage in cell ``c`` during bin ``k``;
    temperature and humidity are bin means.
    """

    start_hours: np.ndarray
    end_hours: np.ndarray
    raw_sums: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray
    centers: np.ndarray
    start_time: np.datetime64 = None

    @property
    def n_bins(self):
        return self.start_hours.size

    def effective_increments(self, beta_lambda):
        """Incremental effective dosage Delta S*(bin, cell)."""
        return self.raw_sums * np.exp(beta_lambda * self.centers)[None, :]

    def end_timestamps(self):
        offs = np.round(self.end_hours * 60).astype(np.int64).astype("timedelta64[m]")
        return self.start_time + offs


def bin_history(history, bin_minutes=60):
    """Aggregate a complete history into bins of ``bin_minutes``.

    The last bin may be partial when the record count is not a multiple of
    the bin length.
    """
    raw = history.raw_interval_min
    if bin_minutes <= 0 or bin_minutes % raw:
        raise ConfigurationError(f"bin of {bin_minutes} min is not a positive multiple of the {raw} min record interval")
    miss = history.missing_mask()
    if miss.any():
        first = history.timestamps[np.flatnonzero(miss)[0]]
        raise MissingDataError(f"{int(miss.sum())} records still have missing values (first at {first}); impute first")
    if len(history) > 1:
        steps = np.diff(history.timestamps).astype(np.int64)
        if np.any(steps != raw):
            raise MissingDataError(
                f"record spacing deviates from {raw} min (largest gap {int(steps.max())} min); fill the grid first"
            )
    per = bin_minutes // raw
    n = len(history)
    idx = np.arange(n) // per
    nb = int(idx[-1]) + 1
    counts = np.bincount(idx, minlength=nb).astype(float)
    sums = np.zeros((nb, history.centers.size))
    np.add.at(sums, idx, history.dosage)
    temp = np.bincount(idx, weights=history.temp_c, minlength=nb) / counts
    rh = np.bincount(idx, weights=history.rh_pct, minlength=nb) / counts
    start = np.arange(nb) * (bin_minutes / 60.0)
    end = start + counts * (raw / 60.0)
    return BinnedCovariates(start, end, sums, temp, rh, history.centers.copy(), history.timestamps[0])


@dataclass(frozen=True)
class EffectiveIncrements:
    """Incremental effective dosage per bin and wavelength cell."""

    start_hours: np.ndarray
    centers: np.ndarray
    delta: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray

    def as_map(self, k):
        """``{wavelength: Delta S*}`` for bin ``k``."""
        return dict(zip(self.centers.tolist(), self.delta[k].tolist()))


def incremental_effective_dosage(history, beta_lambda, bin_minutes=60):
    binned = bin_history(history, bin_minutes)
    return EffectiveIncrements(
        binned.start_hours, binned.centers, binned.effective_increments(beta_lambda), binned.temp_c, binned.rh_pct
    )
