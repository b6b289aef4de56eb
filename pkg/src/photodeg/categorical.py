"""Categorical-effects parameterisation: one free effect per factor level.

Baselines are ND 10 %, 35 C and 25 % RH; their log effects are zero by
construction.  The time scale is the log of the cumulative dosage, which
already carries the nominal ND attenuation.
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DomainError

BASELINES = {"nd": 0.10, "temp_c": 35.0, "rh": 25.0}


def _frozen_map(d):
    return {float(k) if not isinstance(k, (int, np.integer)) else int(k): float(v) for k, v in d.items()}


@dataclass(frozen=True)
class CategoricalParams:
    """Asymptote, per-band log yields, per-level log effects and per-band scales."""

    alpha: float
    bp_effect: dict
    log_nd: dict
    log_temp: dict
    log_rh: dict
    sigma_bp: dict
    sigma_v: float = 0.0
    sigma_eps: float = 0.01
    sigma_u: float = 0.0
    baselines: dict = field(default_factory=lambda: dict(BASELINES))

    def __post_init__(self):
        for name in ("bp_effect", "log_nd", "log_temp", "log_rh", "sigma_bp"):
            object.__setattr__(self, name, _frozen_map(getattr(self, name)))
        if self.sigma_v < 0 or self.sigma_eps < 0 or self.sigma_u < 0:
            raise DomainError("variance components must be nonnegative")

    def as_dict(self):
        return asdict(self)

    def with_(self, **changes):
        return replace(self, **changes)

    def is_valid(self):
        return all(s > 0 for s in self.sigma_bp.values()) and self.sigma_eps >= 0

    def level_effect(self, table, level, baseline):
        if np.isclose(level, baseline):
            return 0.0
        for k, v in table.items():
            if np.isclose(k, level):
                return v
        raise DomainError(f"no effect for level {level}")

    def offset(self, bp, nd, temp_c, rh):
        b = self.baselines
        return (
            self.bp_effect[int(bp)]
            + self.level_effect(self.log_nd, nd, b["nd"])
            + self.level_effect(self.log_temp, temp_c, b["temp_c"])
            + self.level_effect(self.log_rh, rh, b["rh"])
        )

    def names(self):
        """Flat parameter names in reporting order."""
        out = ["alpha"]
        out += [f"bp_{k}" for k in sorted(self.bp_effect)]
        out += [f"log_nd_{k:g}" for k in sorted(self.log_nd)]
        out += [f"log_temp_{k:g}" for k in sorted(self.log_temp)]
        out += [f"log_rh_{k:g}" for k in sorted(self.log_rh)]
        out += [f"sigma_{k}" for k in sorted(self.sigma_bp)]
        return out

    def vector(self):
        vals = [self.alpha]
        for table in (self.bp_effect, self.log_nd, self.log_temp, self.log_rh, self.sigma_bp):
            vals += [table[k] for k in sorted(table)]
        return np.array(vals, dtype=float)

    def from_vector(self, values, **variance):
        """Same layout as ``vector()`` with new values."""
        values = list(map(float, values))
        it = iter(values[1:])
        tables = {}
        for name in ("bp_effect", "log_nd", "log_temp", "log_rh", "sigma_bp"):
            tables[name] = {k: next(it) for k in sorted(getattr(self, name))}
        return replace(self, alpha=values[0], **tables, **variance)


#: Estimates reported for the categorical model fitted to the laboratory data (ND in fractions).
TABLE3 = CategoricalParams(
    alpha=-0.6810,
    bp_effect={306: -6.5620, 326: -7.0844, 353: -9.0275, 452: -10.1087},
    log_nd={0.40: -0.7939, 0.60: -1.0553, 1.00: -1.3082},
    log_temp={25.0: -0.1963, 45.0: 0.1973, 55.0: -0.8193},
    log_rh={0.0: 0.8749, 50.0: -0.3707, 75.0: 0.2287},
    sigma_bp={306: 1.5591, 326: 1.2336, 353: 1.0443, 452: 0.8416},
    sigma_v=0.1,
    sigma_eps=0.01,
)


def level_index(params, data):
    """Positions in ``params.vector()`` used by every specimen.

    Returns ``(offset_idx, sigma_idx)``: ``offset_idx`` is (n_spec, 4) with
    -1 marking a baseline level; ``sigma_idx`` is (n_spec,).
    """
    pos = 1
    cols = []
    sigma_idx = None
    layout = (
        ("bp_effect", data.bp.astype(float), None),
        ("log_nd", data.nd, params.baselines["nd"]),
        ("log_temp", data.temp_c, params.baselines["temp_c"]),
        ("log_rh", data.rh, params.baselines["rh"]),
        ("sigma_bp", data.bp.astype(float), None),
    )
    for name, values, base in layout:
        keys = sorted(getattr(params, name))
        idx = np.full(values.size, -1, dtype=np.int64)
        for j, k in enumerate(keys):
            idx[np.isclose(values, k)] = pos + j
        unmatched = (idx < 0) & (True if base is None else ~np.isclose(values, base))
        if np.any(unmatched):
            raise DomainError(f"no {name} parameter for level {values[np.argmax(unmatched)]:g}")
        pos += len(keys)
        if name == "sigma_bp":
            sigma_idx = idx
        else:
            cols.append(idx)
    return np.column_stack(cols), sigma_idx


def terms_from_vector(vec, offset_idx, sigma_idx):
    padded = np.append(vec, 0.0)  # index -1 reads the trailing zero
    return vec[0], padded[offset_idx].sum(axis=1), vec[sigma_idx]


def categorical_terms(params, data):
    """(alpha, offsets, sigmas) per specimen of a stacked dataset."""
    offset_idx, sigma_idx = level_index(params, data)
    return terms_from_vector(params.vector(), offset_idx, sigma_idx)
