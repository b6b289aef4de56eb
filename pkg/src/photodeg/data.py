"""Laboratory accelerated-test dataset and cleaning rules."""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .path import ExposureConditions
from .spectral import DosageSeries, default_splits

log = logging.getLogger(__name__)

DAMAGE_FLOOR = -0.6
MIN_POINTS = 3


@dataclass(frozen=True)
class Specimen:
    id: str
    conditions: ExposureConditions
    times: np.ndarray
    y: np.ndarray
    dosage: DosageSeries
    group_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise DomainError(f"specimen {self.id}: times and y must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise DomainError(f"specimen {self.id}: measurement times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.size

    def dosage_at_measurements(self):
        return self.dosage.at(self.times)


@dataclass(frozen=True)
class AccelDataset:
    """Constant-condition degradation paths plus per-band wavelength splits."""

    specimens: tuple
    splits: dict = field(default_factory=default_splits)
    exclusions: tuple = ()
    cleaning: dict = field(default_factory=dict)

    def __post_init__(self):
        specimens = tuple(self.specimens)
        ids = [s.id for s in specimens]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DomainError(f"duplicate specimen ids: {dup}")
        object.__setattr__(self, "specimens", specimens)
        object.__setattr__(self, "exclusions", tuple(self.exclusions))

    def __len__(self):
        return len(self.specimens)

    def __iter__(self):
        return iter(self.specimens)

    @property
    def n_obs(self):
        return sum(s.n for s in self.specimens)

    def by_id(self, sid):
        for s in self.specimens:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def subset(self, keep):
        """Dataset restricted to specimens for which ``keep(specimen)`` is true."""
        return replace(self, specimens=tuple(s for s in self.specimens if keep(s)))

    def drop_conditions(self, temp_c, rh):
        return self.subset(lambda s: not (s.conditions.temp_c == temp_c and s.conditions.rh == rh))

    def levels(self, attr):
        return sorted({getattr(s.conditions, attr) for s in self.specimens})


def clean(dataset, floor=DAMAGE_FLOOR, exclusions=(), min_points=MIN_POINTS):
    """Drop measurements below ``floor`` and excluded specimens.

    Specimens left with fewer than ``min_points`` measurements are dropped
    with a warning.  Per-specimen kept/dropped counts are stored in
    ``result.cleaning``.
    """
    excluded = set(exclusions) | set(dataset.exclusions)
    kept = []
    report = {}
    for s in dataset.specimens:
        if s.id in excluded:
            report[s.id] = {"kept": 0, "dropped": s.n, "status": "excluded"}
            continue
        mask = s.y >= floor
        n_keep = int(mask.sum())
        if n_keep < min_points:
            log.warning("specimen %s has %d points at or above %.2f; dropped", s.id, n_keep, floor)
            report[s.id] = {"kept": 0, "dropped": s.n, "status": "too_few_points"}
            continue
        report[s.id] = {"kept": n_keep, "dropped": s.n - n_keep, "status": "ok"}
        kept.append(s if n_keep == s.n else replace(s, times=s.times[mask], y=s.y[mask]))
    missing = excluded - {s.id for s in dataset.specimens}
    if missing:
        log.warning("exclusion list names unknown specimens: %s", sorted(missing))
    return replace(dataset, specimens=tuple(kept), exclusions=tuple(sorted(excluded)), cleaning=report)
