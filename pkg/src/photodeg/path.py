"""Sigmoid degradation path and the functional forms of the explanatory variables."""
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import DomainError

KELVIN = 273.15
FAILURE_THRESHOLD = -0.40

#: Fixed-effect names in reporting order.
FIXED_NAMES = (
    "alpha",
    "beta_lambda",
    "p",
    "ea_over_r",
    "beta_rh",
    "rh0",
    "eta0",
    "b353",
    "sigma0",
    "sigma1",
    "sigma2",
)


@dataclass(frozen=True)
class CombinedParams:
    """Parameters of the combined constant-condition model.

    ``sigma_u`` is the group-level random-effect SD of the nested model and
    stays zero otherwise; ``sigma_v`` is then the within-group SD.
    """

    alpha: float
    beta_lambda: float
    p: float
    ea_over_r: float
    beta_rh: float
    rh0: float
    eta0: float
    b353: float
    sigma0: float
    sigma1: float
    sigma2: float
    sigma_v: float = 0.0
    sigma_eps: float = 0.01
    sigma_u: float = 0.0

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_u < 0:
            raise DomainError("random-effect SDs must be nonnegative")
        if self.sigma_eps < 0:
            raise DomainError("sigma_eps must be nonnegative")

    def fixed(self):
        return np.array([getattr(self, n) for n in FIXED_NAMES], dtype=float)

    @classmethod
    def from_fixed(cls, values, **variance):
        return cls(**dict(zip(FIXED_NAMES, map(float, values))), **variance)

    def as_dict(self):
        return asdict(self)

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def total_sigma_v(self):
        """SD of a new specimen's random effect (group plus specimen level)."""
        return float(np.hypot(self.sigma_v, self.sigma_u))

    def is_valid(self):
        """Scale model positive over 300-532 nm and nonnegative variance components."""
        lam = np.array([300.0, 532.0])
        return (
            self.sigma0 > 0
            and np.all(sigma_of_lambda(lam, self.sigma0, self.sigma1, self.sigma2) > 0)
            and self.sigma_v >= 0
            and self.sigma_u >= 0
            and np.isfinite(self.fixed()).all()
        )

    def sigma_lambda(self, lam):
        return sigma_of_lambda(lam, self.sigma0, self.sigma1, self.sigma2)

    def environment_term(self, temp_c, rh, nd=1.0):
        """eta0 + p log ND - (Ea/R)/TempK - beta_RH (RH - rh0)^2."""
        return (
            self.eta0
            + nd_log_effect(nd, self.p)
            + arrhenius_log(temp_c, self.ea_over_r)
            + rh_log_effect(rh, self.beta_rh, self.rh0)
        )


#: Estimates reported for the combined model fitted to the laboratory data.
TABLE4 = CombinedParams(
    alpha=-0.6191,
    beta_lambda=-0.0297,
    p=-0.5606,
    ea_over_r=1945.6482,
    beta_rh=-0.0005,
    rh0=45.4748,
    eta0=9.8986,
    b353=-11.5661,
    sigma0=0.8019,
    sigma1=7.6776,
    sigma2=-0.0260,
    sigma_v=0.1,
    sigma_eps=0.01,
)

TABLE4_SE = dict(
    alpha=0.01013,
    beta_lambda=0.00026,
    p=0.00781,
    ea_over_r=75.83458,
    beta_rh=0.00001,
    rh0=0.28749,
    eta0=0.25662,
    b353=0.09428,
    sigma0=0.00664,
    sigma1=0.18760,
    sigma2=0.00062,
)


@dataclass(frozen=True)
class ExposureConditions:
    """Constant factor levels of one laboratory specimen."""

    bp: int
    nd: float
    temp_c: float
    rh: float

    def __post_init__(self):
        if not 0.0 < self.nd <= 1.0:
            raise DomainError(f"ND fraction {self.nd} outside (0, 1]")
        if not -40.0 <= self.temp_c <= 100.0:
            raise DomainError(f"temperature {self.temp_c} C outside [-40, 100]")
        if not 0.0 <= self.rh <= 100.0:
            raise DomainError(f"RH {self.rh}% outside [0, 100]")


def phi(lam, beta0, beta_lambda):
    """Quasi-quantum yield exp(beta0 + beta_lambda * lambda)."""
    return np.exp(beta0 + beta_lambda * np.asarray(lam, dtype=float))


def sigma_of_lambda(lam, sigma0, sigma1, sigma2):
    return sigma0 + np.exp(sigma1 + sigma2 * np.asarray(lam, dtype=float))


def arrhenius_log(temp_c, ea_over_r):
    """log f(Temp) up to the constant absorbed in eta0."""
    temp_c = np.asarray(temp_c, dtype=float)
    if np.any(temp_c <= -KELVIN):
        raise DomainError("temperature at or below absolute zero")
    return -ea_over_r / (temp_c + KELVIN)


def rh_log_effect(rh, beta_rh, rh0):
    return -beta_rh * (np.asarray(rh, dtype=float) - rh0) ** 2


def nd_log_effect(nd, p):
    """Extra ND exponent: log d(ND) = p log ND (the filter already carries ND^1)."""
    nd = np.asarray(nd, dtype=float)
    if np.any(nd <= 0):
        raise DomainError("ND fraction must be positive")
    return p * np.log(nd)


def overall_nd_effect(nd, p):
    """Fraction of the unfiltered effect passed by an ND filter: ND^(1 + p)."""
    return np.exp((1.0 + p) * np.log(nd))


def z_combined(conditions, dosage, lam, params, split_term):
    """Standardised log effective dosage of the combined model.

    ``split_term`` is log sum P(l) exp(beta_lambda l) for the specimen's band;
    it is replaced by ``params.b353`` for the 353 nm filter.
    """
    dosage = np.asarray(dosage, dtype=float)
    if np.any(dosage <= 0):
        raise DomainError("dosage must be positive")
    spectral = params.b353 if conditions.bp == 353 else split_term
    num = np.log(dosage) + spectral + params.environment_term(conditions.temp_c, conditions.rh, conditions.nd)
    return num / params.sigma_lambda(lam)


def degradation_path(z, alpha, v=0.0):
    """alpha exp(v) / (1 + exp(-z))."""
    return alpha * np.exp(v) * expit(z)


def dosage_scale_for_z(z, numerator_offset, sigma):
    """Dosage at which the standardised dosage equals ``z``."""
    return np.exp(z * sigma - numerator_offset)


@dataclass(frozen=True)
class Crossing:
    time: float
    multiple: bool = False


def failure_time(path, grid, threshold=FAILURE_THRESHOLD, rtol=1e-6):
    """First time ``path`` reaches ``threshold`` (damage is negative).

    The crossing is bracketed on ``grid`` and refined by bisection.  Returns
    ``None`` when the threshold is never reached; ``multiple`` flags paths
    that cross the threshold more than once on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.array([path(t) for t in grid]) if not _vectorised(path) else np.asarray(path(grid), dtype=float)
    below = vals <= threshold
    if not below.any():
        return None
    k = int(np.argmax(below))
    changes = int(np.count_nonzero(np.diff(below.astype(np.int8)) != 0))
    multiple = changes > 1
    if k == 0:
        return Crossing(float(grid[0]), multiple)
    lo, hi = grid[k - 1], grid[k]
    while hi - lo > rtol * max(abs(hi), 1e-300):
        mid = 0.5 * (lo + hi)
        if path(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return Crossing(float(hi), multiple)


def _vectorised(fn):
    return getattr(fn, "vectorised", False)


def vectorised(fn):
    """Mark ``fn`` as accepting arrays (lets ``failure_time`` evaluate the grid at once)."""
    fn.vectorised = True
    return fn


__all__ = [
    "CombinedParams",
    "Crossing",
    "ExposureConditions",
    "FIXED_NAMES",
    "TABLE4",
    "arrhenius_log",
    "degradation_path",
    "failure_time",
    "nd_log_effect",
    "overall_nd_effect",
    "phi",
    "rh_log_effect",
    "sigma_of_lambda",
    "z_combined",
]
