"""Cumulative-damage prediction under dynamic covariates and calibrated intervals."""
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegeneratePredictionError, DomainError
from .kernels import accumulate_damage, accumulate_damage_batch
from .path import FAILURE_THRESHOLD, FIXED_NAMES, failure_time, vectorised
from .weather import BinnedCovariates, bin_history

log = logging.getLogger(__name__)

REDRAW_WARN_FRACTION = 0.10
MIN_REPLICATES = 1000


@dataclass(frozen=True)
class PredictionBand:
    """Damage predictions at the end of each bin.

    ``point`` uses a zero random effect (the median specimen); ``lower`` is
    the more negative bound because damage is negative.
    """

    times: np.ndarray
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    s_star_cum: np.ndarray
    timestamps: np.ndarray = None
    level: float = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def at(self, hours):
        """Indices of the bins ending at ``hours``."""
        idx = np.searchsorted(self.times, np.asarray(hours, dtype=float) - 1e-9)
        if np.any(idx >= self.times.size) or not np.allclose(self.times[idx], hours, atol=1e-6):
            raise DomainError("requested times are not bin ends of this prediction")
        return idx


def _binned(history, bin_minutes):
    if isinstance(history, BinnedCovariates):
        binned = history
    else:
        binned = bin_history(history, bin_minutes)
    if binned.n_bins == 0:
        raise DomainError("empty covariate history")
    return binned


def _offsets(params, binned):
    # ND is fixed at 100% outdoors, so the p log ND term vanishes
    return params.environment_term(binned.temp_c, binned.rh_pct, 1.0)


def predict_path(history, params, v=0.0, bin_minutes=60, rule="exact", backend=None):
    """Point prediction of cumulative damage for one outdoor specimen.

    Parameters
    ----------
    history : CovariateHistory or BinnedCovariates
        Complete (imputed) weather records.
    params : CombinedParams
    v : float
        Random effect; 0 gives the median specimen.
    rule : {"exact", "midpoint"}
        In-bin integration of the damage slope.  "exact" integrates the
        slope in closed form under each bin's covariates; "midpoint"
        evaluates it at the bin's mid cumulative dosage.
    """
    binned = _binned(history, bin_minutes)
    inc = binned.effective_increments(params.beta_lambda)
    inv_sigma = 1.0 / params.sigma_lambda(binned.centers)
    omega, s_end = accumulate_damage(
        inc, _offsets(params, binned), inv_sigma, params.alpha * math.exp(v), rule=rule, backend=backend
    )
    return PredictionBand(
        times=binned.end_hours.copy(),
        point=omega,
        lower=omega.copy(),
        upper=omega.copy(),
        s_star_cum=s_end,
        timestamps=binned.end_timestamps() if binned.start_time is not None else None,
        meta={"v": float(v), "bin_minutes": bin_minutes, "rule": rule},
    )


# ---------------------------------------------------------------------------
# calibrated intervals
# ---------------------------------------------------------------------------


def _replicate_stream(seed, b):
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(b), 0, 0]))


@dataclass
class _DrawSpec:
    mean: np.ndarray
    root: np.ndarray
    sigma_hat: float
    n_fixed: int
    n_var: int


def _draw_block(spec, seed, lo, hi):
    """Draws for replicates lo..hi-1: (theta rows, sigma_v*, v*, redraws)."""
    n = hi - lo
    theta = np.empty((n, spec.n_fixed))
    sig = np.empty(n)
    vs = np.empty(n)
    redraws = 0
    dim = spec.mean.size
    for i in range(n):
        rng = _replicate_stream(seed, lo + i)
        while True:
            x = spec.mean + spec.root @ rng.standard_normal(dim)
            fixed = x[: spec.n_fixed]
            var = x[spec.n_fixed :]
            s0, s1, s2 = fixed[8], fixed[9], fixed[10]
            ok = s0 > 0 and s0 + math.exp(s1 + s2 * 532.0) > 0 and np.all(var > 0)
            if ok:
                break
            redraws += 1
        theta[i] = fixed
        sig[i] = math.sqrt(float(np.sum(var * var)))
        vs[i] = spec.sigma_hat * rng.standard_normal()
    return theta, sig, vs, redraws


def _draw_all(spec, seed, B, n_jobs):
    chunk = max(1, -(-B // max(1, n_jobs * 4)))
    bounds = [(lo, min(B, lo + chunk)) for lo in range(0, B, chunk)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(lambda b: _draw_block(spec, seed, *b), bounds))
    else:
        parts = [_draw_block(spec, seed, *b) for b in bounds]
    theta = np.concatenate([p[0] for p in parts])
    sig = np.concatenate([p[1] for p in parts])
    vs = np.concatenate([p[2] for p in parts])
    return theta, sig, vs, sum(p[3] for p in parts)


def _matrix_root(cov):
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(lam, 0.0, None))[None, :]


def draw_spec(fit):
    """Sampling distribution of (fixed effects, random-effect SDs) from a fit."""
    names = list(FIXED_NAMES) + list(fit.variance_names)
    est = fit.params.as_dict()
    mean = np.array([est[n] for n in names])
    cov = fit.covariance_for(names)
    return _DrawSpec(mean, _matrix_root(cov), fit.params.total_sigma_v, len(FIXED_NAMES), len(fit.variance_names))


def calibrated_interval(
    history,
    fit,
    level=0.95,
    B=50000,
    seed=0,
    n_jobs=1,
    method="analytic",
    bin_minutes=60,
    rule="exact",
    times=None,
    backend=None,
):
    """Calibrated prediction band for an outdoor specimen.

    Draws ``theta*`` from the asymptotic normal distribution of the
    estimates and ``v*`` from N(0, sigma_v_hat^2), evaluates the
    probability-integral transform ``W* = F(Omega* | theta*)`` of each
    simulated path, and inverts ``F(. | theta_hat)`` at the ``(1-level)/2``
    and ``(1+level)/2`` quantiles of ``W*``.

    ``F`` is the distribution of damage induced by the random effect alone,
    ``F(w | theta) = Phi(-log(w / Omega_0(theta)) / sigma_v)``.  With
    ``method="analytic"`` the ratio ``Omega*/Omega_0(theta*)`` is taken as
    ``exp(v*)`` exactly; ``method="simulate"`` computes both paths for
    every replicate.
    """
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    if B < MIN_REPLICATES:
        raise DomainError(f"B must be at least {MIN_REPLICATES}")
    if method not in ("analytic", "simulate"):
        raise DomainError(f"unknown method {method!r}")
    binned = _binned(history, bin_minutes)
    base = predict_path(binned, fit.params, 0.0, rule=rule, backend=backend)
    idx = np.arange(len(base)) if times is None else base.at(times)
    point = base.point[idx]
    meta = {"B": B, "seed": seed, "method": method, "level": level, "redraws": 0, "redraw_fraction": 0.0}
    sigma_hat = fit.params.total_sigma_v
    if sigma_hat == 0.0:
        return PredictionBand(
            base.times[idx], point, point.copy(), point.copy(), base.s_star_cum[idx],
            None if base.timestamps is None else base.timestamps[idx], level, meta,
        )  # fmt: skip
    spec = draw_spec(fit)
    theta, sig, vs, redraws = _draw_all(spec, seed, B, n_jobs)
    frac = redraws / (B + redraws)
    meta.update(redraws=int(redraws), redraw_fraction=frac)
    if frac > REDRAW_WARN_FRACTION:
        warnings.warn(f"{frac:.1%} of parameter draws were invalid and redrawn", RuntimeWarning, stacklevel=2)
    if method == "analytic":
        W = ndtr(-vs / sig)
        wl, wu = np.quantile(W, [(1 - level) / 2, (1 + level) / 2])
        wl = np.full(idx.size, wl)
        wu = np.full(idx.size, wu)
    else:
        W = _simulated_pit(binned, theta, vs, sig, idx, rule, backend)
        wl, wu = np.quantile(W, [(1 - level) / 2, (1 + level) / 2], axis=0)
    lower = point * np.exp(-sigma_hat * ndtri(wl))
    upper = point * np.exp(-sigma_hat * ndtri(wu))
    meta.update(w_lower=float(np.median(wl)), w_upper=float(np.median(wu)))
    return PredictionBand(
        base.times[idx], point, lower, upper, base.s_star_cum[idx],
        None if base.timestamps is None else base.timestamps[idx], level, meta,
    )  # fmt: skip


def _simulated_pit(binned, theta, vs, sig, idx, rule, backend, chunk=512):
    B = theta.shape[0]
    W = np.empty((B, idx.size))
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        th = np.column_stack([theta[lo:hi], vs[lo:hi]])
        th0 = np.column_stack([theta[lo:hi], np.zeros(hi - lo)])
        sim = accumulate_damage_batch(binned.raw_sums, binned.centers, binned.temp_c, binned.rh_pct, th, rule, backend)
        ref = accumulate_damage_batch(binned.raw_sums, binned.centers, binned.temp_c, binned.rh_pct, th0, rule, backend)
        sim, ref = sim[:, idx], ref[:, idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ref != 0, sim / ref, np.exp(vs[lo:hi])[:, None])
        W[lo:hi] = ndtr(-np.log(ratio) / sig[lo:hi, None])
    return W


# ---------------------------------------------------------------------------
# random-effect adjustment from early measurements
# ---------------------------------------------------------------------------

DEFAULT_WINDOW = (5, 10)


def _window(values, window):
    first, last = window
    return np.asarray(values, dtype=float)[first - 1 : last]


def estimate_random_effect(measured, predicted, window=DEFAULT_WINDOW):
    """Least-squares multiplicative effect from measurements ``window`` (1-based, inclusive).

    Returns ``v`` with ``exp(v) = sum(y * yhat) / sum(yhat^2)`` over the
    window; a nonpositive ratio gives 0 with a warning.
    """
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if measured.shape != predicted.shape:
        raise DomainError("measured and predicted must have the same length")
    if measured.size < window[1]:
        raise DomainError(f"need at least {window[1]} measurements, got {measured.size}")
    y = _window(measured, window)
    yhat = _window(predicted, window)
    den = float(np.dot(yhat, yhat))
    if den == 0.0:
        raise DegeneratePredictionError("predictions are zero over the estimation window")
    ratio = float(np.dot(y, yhat)) / den
    if ratio <= 0:
        warnings.warn("nonpositive scale estimate; random effect set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return math.log(ratio)


def adjust_prediction(predicted, v):
    return np.exp(v) * np.asarray(predicted, dtype=float)


def estimate_group_effects(groups, sigma_u, sigma_w, sigma_eps, window=DEFAULT_WINDOW):
    """Group and specimen effects from early measurements.

    ``groups`` maps a group id to a list of ``(measured, predicted)`` pairs.
    The group effect uses the pooled windows of all its specimens; each
    specimen effect is the shrunken log ratio left over, with a normal prior
    of SD ``sigma_w`` and the ratio's sampling variance from ``sigma_eps``.

    Returns ``{group: (u, [w_1, ...])}``.
    """
    out = {}
    for g, pairs in groups.items():
        num = den = 0.0
        per = []
        for measured, predicted in pairs:
            if len(measured) < window[1]:
                raise DomainError(f"need at least {window[1]} measurements per specimen")
            y = _window(measured, window)
            yhat = _window(predicted, window)
            num += float(np.dot(y, yhat))
            den += float(np.dot(yhat, yhat))
            per.append((float(np.dot(y, yhat)), float(np.dot(yhat, yhat))))
        if den == 0.0:
            raise DegeneratePredictionError(f"predictions are zero over the windows of group {g}")
        if num <= 0:
            warnings.warn(f"nonpositive pooled scale for group {g}; group effect set to 0", RuntimeWarning, stacklevel=2)
            u = 0.0
        else:
            u = math.log(num / den)
        ws = []
        for a, b in per:
            if a <= 0 or b == 0 or sigma_w == 0:
                ws.append(0.0)
                continue
            r = a / b
            var = sigma_eps**2 / (b * r * r)
            ws.append((math.log(r) - u) * sigma_w**2 / (sigma_w**2 + var))
        out[g] = (u, ws)
    return out


def prediction_mse(pairs):
    """Mean squared difference over all points of all ``(measured, predicted)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError("no prediction pairs")
    sq = 0.0
    n = 0
    for measured, predicted in pairs:
        d = np.asarray(measured, dtype=float) - np.asarray(predicted, dtype=float)
        sq += float(np.dot(d, d))
        n += d.size
    if n == 0:
        raise DomainError("no measurement points")
    return sq / n


# ---------------------------------------------------------------------------
# failure times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FailureSummary:
    specimen_id: str
    point: float
    lower: float
    upper: float
    multiple: bool


def band_failure_times(band, threshold=FAILURE_THRESHOLD, specimen_id=""):
    """Threshold crossings (hours) of the point path and both bounds.

    Paths are linear between bin ends; ``None`` when the threshold is not
    reached within the history.  The lower bound crosses first.
    """
    t = np.concatenate(([0.0], band.times))

    def crossing(values):
        vals = np.concatenate(([0.0], values))
        fn = vectorised(lambda s: np.interp(s, t, vals))
        c = failure_time(fn, t, threshold)
        return (None, False) if c is None else (c.time, c.multiple)

    p, m0 = crossing(band.point)
    lo, m1 = crossing(band.lower)
    up, m2 = crossing(band.upper)
    return FailureSummary(specimen_id, p, lo, up, m0 or m1 or m2)
