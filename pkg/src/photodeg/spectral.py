"""Doses, dosages and wavelength splits for constant laboratory exposures."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateInputError, DomainError, ExtrapolationError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

#: 2 nm cell centres of the recorded outdoor spectrum, 300-532 nm.
CELL_CENTERS = np.arange(300.0, 533.0, 2.0)
CELL_WIDTH = 2.0

#: Nominal band-pass windows (nm) keyed by filter centre.
BP_WINDOWS = {
    306: (303.0, 309.0),
    326: (320.0, 332.0),
    353: (332.0, 374.0),
    452: (373.0, 531.0),
}
BP_CENTERS = tuple(sorted(BP_WINDOWS))
ND_LEVELS = (0.10, 0.40, 0.60, 1.00)


@dataclass(frozen=True)
class SpectralCurve:
    """A nonnegative tabulated function of wavelength."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise DomainError("grid and values must be 1-D arrays of equal length")
        if grid.size < 2:
            raise DomainError("a spectral curve needs at least two grid points")
        if not np.all(np.diff(grid) > 0):
            raise DomainError("wavelength grid must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("spectral values must be finite and nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __call__(self, wavelength):
        return np.interp(wavelength, self.grid, self.values, left=0.0, right=0.0)


@dataclass(frozen=True)
class FilterStack:
    """Band-pass filter (hard window) combined with a neutral-density filter."""

    bp_center: int
    nd_fraction: float = 1.0
    bp_window: tuple = None

    def __post_init__(self):
        if self.bp_window is None:
            if self.bp_center not in BP_WINDOWS:
                raise DomainError(f"unknown BP filter {self.bp_center}; give bp_window explicitly")
            object.__setattr__(self, "bp_window", BP_WINDOWS[self.bp_center])
        lo, hi = self.bp_window
        if not lo < hi:
            raise DomainError("bp_window must satisfy lo < hi")
        if not 0.0 < self.nd_fraction <= 1.0:
            raise DomainError("nd_fraction must lie in (0, 1]")

    def transmission(self, wavelength):
        lo, hi = self.bp_window
        wavelength = np.asarray(wavelength, dtype=float)
        inside = (wavelength >= lo) & (wavelength <= hi)
        return np.where(inside, self.nd_fraction, 0.0)


@dataclass(frozen=True)
class DosageSeries:
    """Cumulative dosage D(t) recorded at (hour) time stamps."""

    times: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        cum = np.asarray(self.cumulative, dtype=float)
        if times.ndim != 1 or times.shape != cum.shape or times.size < 1:
            raise DomainError("times and cumulative must be nonempty 1-D arrays of equal length")
        if np.any(np.diff(times) <= 0):
            raise DomainError("dosage time stamps must be strictly increasing")
        if cum[0] < 0 or np.any(np.diff(cum) < 0):
            raise DomainError("cumulative dosage must be nonnegative and nondecreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "cumulative", cum)

    def at(self, t):
        """Linearly interpolated cumulative dosage at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.times[0], self.times[-1]
        if np.any(t < lo) or np.any(t > hi):
            raise ExtrapolationError(f"time outside recorded dosage range [{lo}, {hi}]")
        return np.interp(t, self.times, self.cumulative)

    @classmethod
    def linear(cls, rate, t_end, step=12.0):
        """Dosage accumulating at a constant ``rate`` per hour from 0 to ``t_end``."""
        n = int(np.ceil(t_end / step))
        times = np.arange(n + 1) * step
        return cls(times, rate * times)


@dataclass(frozen=True)
class WavelengthSplit:
    """Proportions P(lambda) of a band's dosage falling in each 2 nm cell."""

    centers: np.ndarray
    proportions: np.ndarray
    window: tuple = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        p = np.asarray(self.proportions, dtype=float)
        if c.shape != p.shape or c.ndim != 1 or c.size == 0:
            raise DomainError("centers and proportions must be nonempty 1-D arrays of equal length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise DomainError("proportions must be nonnegative and sum to one")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "proportions", p)

    def log_weight(self, beta_lambda):
        """log sum_l P(l) exp(beta_lambda * l), the spectral term of the combined model."""
        with np.errstate(divide="ignore"):
            logp = np.log(self.proportions)
        return float(logsumexp(logp + beta_lambda * self.centers))


def filtered_irradiance(lamp, filters):
    """Lamp spectrum after the band-pass window and ND attenuation."""
    lo, hi = filters.bp_window
    if lamp.grid[0] > lo or lamp.grid[-1] < hi:
        raise DomainError(
            f"lamp grid [{lamp.grid[0]}, {lamp.grid[-1]}] does not cover BP window [{lo}, {hi}]"
        )
    return SpectralCurve(lamp.grid, lamp.values * filters.transmission(lamp.grid))


def _segment_area(grid, values, a, b):
    # exact integral of the piecewise-linear interpolant over [a, b]
    inner = (grid > a) & (grid < b)
    x = np.concatenate(([a], grid[inner], [b]))
    y = np.interp(x, grid, values)
    return float(_trapezoid(y, x))


def area_proportions(filtered, window, cell_width=CELL_WIDTH):
    """Trapezoid area of each ``cell_width`` cell in ``window``, normalised to one.

    Cell centres are returned alongside the proportions and are the
    wavelengths used for the quasi-quantum-yield weighting.
    """
    lo, hi = float(window[0]), float(window[1])
    if lo < filtered.grid[0] or hi > filtered.grid[-1]:
        raise DomainError("window extends beyond the curve's grid")
    if np.count_nonzero((filtered.grid >= lo) & (filtered.grid <= hi)) < 2:
        raise DomainError("need at least two grid points inside the window")
    n = int(round((hi - lo) / cell_width))
    if n < 1 or not np.isclose(lo + n * cell_width, hi):
        raise DomainError(f"window width {hi - lo} is not a multiple of the {cell_width} nm cell")
    edges = lo + cell_width * np.arange(n + 1)
    areas = np.array([_segment_area(filtered.grid, filtered.values, edges[k], edges[k + 1]) for k in range(n)])
    total = areas.sum()
    if not total > 0:
        raise DegenerateInputError(f"curve has zero area on window [{lo}, {hi}]")
    props = areas / total
    props /= props.sum()
    return WavelengthSplit(0.5 * (edges[:-1] + edges[1:]), props, (lo, hi))


def uniform_split(window, cell_width=CELL_WIDTH):
    """Constant dosage density across ``window`` (used for the wide 452 nm band)."""
    lo, hi = window
    n = int(round((hi - lo) / cell_width))
    centers = lo + cell_width * (np.arange(n) + 0.5)
    return WavelengthSplit(centers, np.full(n, 1.0 / n), (float(lo), float(hi)))


def wavelength_dosage(series, split, t):
    """Cumulative dosage per 2 nm cell at time ``t``: D(t) * P(lambda)."""
    d = float(series.at(t))
    return dict(zip(split.centers.tolist(), (d * split.proportions).tolist()))


def effective_dosage_constant(series, split, beta_lambda, t):
    """sum_l D(t) P(l) exp(beta_lambda * l) for a constant-condition specimen."""
    d = series.at(t)
    return d * float(np.sum(split.proportions * np.exp(beta_lambda * split.centers)))


def reference_lamp(grid=None):
    """Smooth stand-in for a filtered xenon-arc lamp spectrum (arbitrary units).

    A steep UV-B cut-on plus two broad emission features inside the 353 nm
    band; only the shape matters because dosage units are arbitrary.
    """
    if grid is None:
        grid = np.arange(295.0, 541.0, 1.0)
    lam = np.asarray(grid, dtype=float)
    base = 1.0 / (1.0 + np.exp(-(lam - 312.0) / 5.0)) * (1.0 + 0.002 * (lam - 312.0))
    peaks = 0.6 * np.exp(-0.5 * ((lam - 342.0) / 4.0) ** 2) + 0.4 * np.exp(-0.5 * ((lam - 366.0) / 3.0) ** 2)
    return SpectralCurve(lam, base + peaks)


def default_splits(lamp=None):
    """Wavelength splits for the four band-pass filters.

    The 306, 326 and 353 nm bands use lamp trapezoid areas; the wide 452 nm
    band is treated as having constant dosage density.
    """
    lamp = reference_lamp() if lamp is None else lamp
    splits = {}
    for bp in (306, 326, 353):
        window = BP_WINDOWS[bp]
        splits[bp] = area_proportions(filtered_irradiance(lamp, FilterStack(bp)), window)
    splits[452] = uniform_split(BP_WINDOWS[452])
    return splits
