"""Maximum-likelihood fits of the categorical and combined degradation models."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .categorical import BASELINES, CategoricalParams, categorical_terms, level_index, terms_from_vector
from .errors import DegenerateInputError, DomainError, RankDeficiencyError
from .likelihood import (
    MODEL_KINDS,
    combined_names,
    combined_terms,
    contributions,
    mean_paths,
    stack,
)
from .optim import covariance_from_hessian, maximize
from .path import FIXED_NAMES, KELVIN, CombinedParams

log = logging.getLogger(__name__)

#: Conditions (temperature C, RH %) left out of the combined fit by default.
COMBINED_EXCLUDED_CELLS = ((55.0, 75.0),)
LOG_SCALE = {"sigma0", "sigma_v", "sigma_eps", "sigma_u"}
FORMAT_VERSION = "1"


def aic(loglik, n_params):
    """Akaike information criterion 2k - 2 loglik."""
    if n_params < 1:
        raise DomainError("n_params must be at least 1")
    return 2.0 * n_params - 2.0 * loglik


def wald_p_values(estimates, se):
    """Two-sided Wald p-values; not meaningful for parameters on a boundary."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(est / se)
    return np.where(se > 0, 2.0 * stats.norm.sf(z), np.nan)


@dataclass
class FitResult:
    """Common part of a fitted model.

    ``names``/``estimates`` list the free parameters on their natural scale
    and ``full_covariance`` their asymptotic covariance.
    """

    names: tuple
    estimates: np.ndarray
    full_covariance: np.ndarray
    loglik: float
    n_params: int
    model_kind: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def aic(self):
        return aic(self.loglik, self.n_params)

    @property
    def se(self):
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.full_covariance), 0.0, None))))

    @property
    def p_values(self):
        se = self.se
        return dict(zip(self.names, wald_p_values(self.estimates, [se[n] for n in self.names])))

    def covariance_for(self, names):
        """Covariance of ``names``; parameters held fixed get zero rows."""
        pos = {n: i for i, n in enumerate(self.names)}
        out = np.zeros((len(names), len(names)))
        for a, na in enumerate(names):
            for b, nb in enumerate(names):
                if na in pos and nb in pos:
                    out[a, b] = self.full_covariance[pos[na], pos[nb]]
        return out

    def table(self):
        """Rows of (name, estimate, SE, p-value)."""
        se = self.se
        pv = self.p_values
        return [(n, float(e), float(se[n]), float(pv[n])) for n, e in zip(self.names, self.estimates)]

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "model_kind": self.model_kind,
            "loglik": self.loglik,
            "n_params": self.n_params,
            "aic": self.aic,
            "parameters": {n: {"estimate": e, "se": s, "p_value": p} for n, e, s, p in self.table()},
            "covariance": {"names": list(self.names), "matrix": self.full_covariance.tolist()},
            "diagnostics": _jsonable(self.diagnostics),
        }

    def report(self, title):
        lines = [f"# {title}", f"format_version = {FORMAT_VERSION}", f"model = {self.model_kind}"]
        lines.append(f"{'parameter':<16}{'estimate':>16}{'se':>14}{'p_value':>12}")
        for n, e, s, p in self.table():
            lines.append(f"{n:<16}{e:>16.6g}{s:>14.6g}{p:>12.4g}")
        lines.append(f"loglik = {self.loglik:.12g}")
        lines.append(f"n_params = {self.n_params}")
        lines.append(f"aic = {self.aic:.12g}")
        return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass
class CombinedFit(FitResult):
    params: CombinedParams = None

    @property
    def variance_names(self):
        return {"A": (), "B": ("sigma_v",), "C": ("sigma_v", "sigma_u")}[self.model_kind]

    @property
    def covariance(self):
        """Covariance of the 11 fixed effects (zero rows for parameters held fixed)."""
        return self.covariance_for(FIXED_NAMES)


@dataclass
class CategoricalFit(FitResult):
    params: CategoricalParams = None


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------


def _to_internal(names, values):
    return np.array([math.log(v) if n in LOG_SCALE else v for n, v in zip(names, values)], dtype=float)


def _to_natural(names, x):
    return np.array([math.exp(v) if n in LOG_SCALE else v for n, v in zip(names, x)], dtype=float)


def _natural_covariance(names, x, H):
    cov_int, pd = covariance_from_hessian(H)
    jac = np.array([math.exp(v) if n in LOG_SCALE else 1.0 for n, v in zip(names, x)])
    return cov_int * jac[:, None] * jac[None, :], pd


def _optimise(names, start, loglik, n_starts, seed, max_iter):
    x0 = _to_internal(names, start)
    res = maximize(loglik, x0, n_starts=n_starts, seed=seed, max_iter=max_iter)
    cov, pd = _natural_covariance(names, res.x, res.hessian)
    diag = {
        "converged": res.converged,
        "hessian_pd": pd and res.hessian_pd,
        "pseudo_inverse": not pd,
        "gradient_inf_norm": res.grad_norm,
        "n_eval": res.n_eval,
        "n_iter": res.n_iter,
        "start_logliks": res.start_values,
        "trace": res.trace,
    }
    return _to_natural(names, res.x), res.fun, cov, diag


# ---------------------------------------------------------------------------
# categorical model
# ---------------------------------------------------------------------------


def _check_identifiable(data):
    factors = {"bp": data.bp.astype(float), "nd": data.nd, "temp_c": data.temp_c, "rh": data.rh}
    cols = []
    for name, values in factors.items():
        levels = np.unique(values)
        if name != "bp":
            if levels.size < 2:
                raise RankDeficiencyError(f"factor {name} has a single level ({levels[0]:g}); its effects are not identifiable")
            if not np.any(np.isclose(levels, BASELINES[name])):
                raise RankDeficiencyError(f"factor {name} lacks its baseline level {BASELINES[name]:g}")
            levels = levels[~np.isclose(levels, BASELINES[name])]
        cols += [np.isclose(values, lv).astype(float) for lv in levels]
    X = np.column_stack(cols)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankDeficiencyError(f"categorical design has rank {rank} < {X.shape[1]} effects")
    return X


def _initial_categorical(data, dataset):
    if data.y.size == 0:
        raise DegenerateInputError("dataset has no measurements")
    X = _check_identifiable(data)
    alpha0 = 1.1 * float(np.min(data.y))
    if not alpha0 < 0:
        raise DegenerateInputError("damage values must be negative to fit a degradation path")
    offs = np.full(data.n_spec, np.nan)
    sig = np.full(data.n_spec, np.nan)
    for i in range(data.n_spec):
        sl = slice(data.starts[i], data.ends[i])
        ld = data.log_d[sl]
        q = np.clip(data.y[sl] / alpha0, 0.02, 0.98)
        ok = np.isfinite(ld)
        if ok.sum() < 2 or np.ptp(ld[ok]) == 0:
            continue
        b, a = np.polyfit(ld[ok], np.log(q[ok] / (1 - q[ok])), 1)
        if b > 0:
            offs[i] = a / b
            sig[i] = 1.0 / b
    good = np.isfinite(offs)
    if good.sum() < X.shape[1]:
        raise DegenerateInputError("too few specimens with an increasing damage trend to initialise the fit")
    coef, *_ = np.linalg.lstsq(X[good], offs[good], rcond=None)
    it = iter(coef)
    bp_levels = sorted(set(int(b) for b in data.bp))
    bp_effect = {b: next(it) for b in bp_levels}

    def table(values, base):
        lv = [v for v in np.unique(values) if not np.isclose(v, base)]
        return {float(v): next(it) for v in lv}

    log_nd = table(data.nd, BASELINES["nd"])
    log_temp = table(data.temp_c, BASELINES["temp_c"])
    log_rh = table(data.rh, BASELINES["rh"])
    sigma_bp = {}
    for b in bp_levels:
        s = sig[good & (data.bp == b)]
        sigma_bp[b] = float(np.median(s)) if s.size else 1.0
    return CategoricalParams(alpha0, bp_effect, log_nd, log_temp, log_rh, sigma_bp, sigma_v=0.1, sigma_eps=0.02)


def categorical_loglik(params, dataset, random_effect=True, quad_order=None, backend=None, data=None):
    """Marginal log-likelihood of the categorical model (specimen random effect if requested)."""
    data = stack(dataset) if data is None else data
    if not params.is_valid() or not params.sigma_eps > 0:
        return -np.inf
    alpha, offsets, sigmas = categorical_terms(params, data)
    return _categorical_ll(data, alpha, offsets, sigmas, params.sigma_v, params.sigma_eps, random_effect, quad_order, backend)


def _categorical_ll(data, alpha, offsets, sigmas, sigma_v, sigma_eps, random_effect, quad_order, backend):
    if np.any(sigmas <= 0) or not sigma_eps > 0:
        return -np.inf
    m = mean_paths(data, alpha, offsets, sigmas)
    if not np.all(np.isfinite(m)):
        return -np.inf
    kind = "B" if random_effect else "A"
    ll = float(np.sum(contributions(data, m, sigma_v, sigma_eps, kind, quad_order, backend=backend)))
    return ll if np.isfinite(ll) else -np.inf


def fit_categorical(dataset, random_effect=True, quad_order=None, n_starts=5, seed=0, max_iter=500, init=None, backend=None):
    """Fit the categorical-effects model by maximum likelihood.

    Baseline levels (ND 10 %, 35 C, 25 % RH) carry no parameter, so their
    effects are exactly zero.  Standard errors come from the observed
    information; per-band scales and variance components are optimised on
    the log scale.
    """
    data = stack(dataset)
    if data.n_spec == 0:
        raise DegenerateInputError("dataset has no specimens")
    start = _initial_categorical(data, dataset) if init is None else init
    offset_idx, sigma_idx = level_index(start, data)
    names = start.names()
    k = len(names)
    var_names = ["sigma_v", "sigma_eps"] if random_effect else ["sigma_eps"]
    all_names = tuple(names + var_names)
    is_log = np.array([n.startswith("sigma_") for n in all_names])

    def natural(x):
        with np.errstate(over="ignore"):
            return np.where(is_log, np.exp(np.where(is_log, x, 0.0)), x)

    def objective(x):
        nat = natural(x)
        alpha, offsets, sigmas = terms_from_vector(nat[:k], offset_idx, sigma_idx)
        sigma_v = nat[k] if random_effect else 0.0
        return _categorical_ll(data, alpha, offsets, sigmas, sigma_v, nat[-1], random_effect, quad_order, backend)

    s0 = np.concatenate([start.vector(), [start.sigma_v, start.sigma_eps][-len(var_names) :]])
    x0 = np.where(is_log, np.log(np.where(is_log, s0, 1.0)), s0)
    res = maximize(objective, x0, n_starts=n_starts, seed=seed, max_iter=max_iter)
    est = natural(res.x)
    cov_int, pd = covariance_from_hessian(res.hessian)
    jac = np.where(is_log, est, 1.0)
    cov = cov_int * jac[:, None] * jac[None, :]
    diag = {
        "converged": res.converged,
        "hessian_pd": pd and res.hessian_pd,
        "pseudo_inverse": not pd,
        "gradient_inf_norm": res.grad_norm,
        "n_eval": res.n_eval,
        "start_logliks": res.start_values,
    }
    extra = dict(zip(var_names, est[k:]))
    if not random_effect:
        extra["sigma_v"] = 0.0
    return CategoricalFit(
        names=all_names,
        estimates=est,
        full_covariance=cov,
        loglik=float(res.fun),
        n_params=len(all_names),
        model_kind="categorical",
        diagnostics=diag,
        params=start.from_vector(est[:k], **extra),
    )


# ---------------------------------------------------------------------------
# combined model
# ---------------------------------------------------------------------------


def init_from_categorical(cat, splits, excluded_temps=(55.0,)):
    """Stage-wise starting values for the combined model from categorical estimates.

    Each functional form is fitted to the corresponding categorical
    effects: a power line for ND, an Arrhenius line for temperature, a
    quadratic for RH, a log-linear yield across the narrow bands and the
    scale curve through the per-band scales.
    """
    b = cat.baselines
    nd_b, tk_b, rh_b = b["nd"], b["temp_c"] + KELVIN, b["rh"]

    x = np.log(np.array(sorted(cat.log_nd)) / nd_b)
    y = np.array([cat.log_nd[k] for k in sorted(cat.log_nd)])
    p = float(np.dot(x, y) / np.dot(x, x)) if x.size else 0.0

    temps = [t for t in sorted(cat.log_temp) if not any(np.isclose(t, e) for e in excluded_temps)]
    if temps:
        x = 1.0 / (np.array(temps) + KELVIN) - 1.0 / tk_b
        y = np.array([cat.log_temp[t] for t in temps])
        ea = float(-np.dot(x, y) / np.dot(x, x))
    else:
        ea = 0.0

    rhs = np.array(sorted(cat.log_rh))
    lg = np.array([cat.log_rh[r] for r in rhs])
    A = np.column_stack([rhs**2 - rh_b**2, rhs - rh_b])
    (a, c), *_ = np.linalg.lstsq(A, lg, rcond=None)
    if a != 0 and 0 < -c / (2 * a) < 100:
        beta_rh, rh0 = -a, -c / (2 * a)
    else:
        beta_rh, rh0 = 0.0, rh_b

    narrow = [bp for bp in sorted(cat.bp_effect) if bp != 353]

    def spread(beta):
        r = [cat.bp_effect[bp] - splits[bp].log_weight(beta) for bp in narrow]
        return float(np.var(r))

    beta_l = float(optimize.minimize_scalar(spread, bounds=(-0.2, 0.1), method="bounded").x)
    env_b = p * math.log(nd_b) - ea / tk_b - beta_rh * (rh_b - rh0) ** 2
    eta0 = float(np.mean([cat.bp_effect[bp] - splits[bp].log_weight(beta_l) for bp in narrow])) - env_b
    b353 = cat.bp_effect.get(353, eta0) - eta0 - env_b

    lam = np.array(sorted(cat.sigma_bp), dtype=float)
    sg = np.array([cat.sigma_bp[k] for k in sorted(cat.sigma_bp)])
    s0 = 0.9 * sg.min()
    s2, s1 = np.polyfit(lam, np.log(np.maximum(sg - s0, 1e-6)), 1)
    fit = optimize.least_squares(
        lambda q: q[0] + np.exp(q[1] + q[2] * lam) - sg,
        [s0, s1, s2],
        bounds=([1e-6, -np.inf, -np.inf], [np.inf, np.inf, np.inf]),
    )
    s0, s1, s2 = fit.x
    return CombinedParams(
        alpha=cat.alpha,
        beta_lambda=beta_l,
        p=p,
        ea_over_r=ea,
        beta_rh=float(beta_rh),
        rh0=float(rh0),
        eta0=eta0,
        b353=float(b353),
        sigma0=float(s0),
        sigma1=float(s1),
        sigma2=float(s2),
        sigma_v=max(cat.sigma_v, 0.02),
        sigma_eps=cat.sigma_eps,
    )


def combined_loglik_fn(dataset, model_kind, quad_order=None, backend=None):
    """Closure over a stacked dataset returning the log-likelihood of CombinedParams."""
    data = stack(dataset)

    def loglik(params):
        if model_kind == "A":
            params = params.with_(p=0.0, sigma_v=0.0)
        if not params.is_valid() or not params.sigma_eps > 0:
            return -np.inf
        alpha, offsets, sigmas = combined_terms(params, data, dataset.splits)
        if np.any(sigmas <= 0):
            return -np.inf
        m = mean_paths(data, alpha, offsets, sigmas)
        if not np.all(np.isfinite(m)):
            return -np.inf
        ll = contributions(data, m, params.sigma_v, params.sigma_eps, model_kind, quad_order, params.sigma_u, backend)
        total = float(np.sum(ll))
        return total if np.isfinite(total) else -np.inf

    return loglik


def free_names(model_kind):
    names = list(combined_names(model_kind))
    if model_kind == "A":
        names.remove("p")
        names.remove("sigma_v")
    return tuple(names)


def fit_combined(
    dataset,
    init=None,
    model_kind="B",
    quad_order=None,
    exclude_cells=COMBINED_EXCLUDED_CELLS,
    n_starts=5,
    seed=0,
    max_iter=500,
    backend=None,
):
    """Fit the combined model (kind A, B or C) by maximum likelihood.

    Parameters
    ----------
    init : CombinedParams, optional
        Starting values; by default the categorical model is fitted first
        and its effects seed every functional form.
    exclude_cells : sequence of (temp_c, rh)
        Conditions removed before fitting.
    """
    if model_kind not in MODEL_KINDS:
        raise DomainError(f"unknown model kind {model_kind!r}")
    if len(dataset) == 0:
        raise DegenerateInputError("dataset has no specimens")
    if init is None:
        cat = fit_categorical(dataset, n_starts=1, seed=seed, max_iter=max_iter, backend=backend)
        init = init_from_categorical(cat.params, dataset.splits, [t for t, _ in exclude_cells])
    for temp_c, rh in exclude_cells:
        dataset = dataset.drop_conditions(temp_c, rh)
    if len(dataset) == 0:
        raise DegenerateInputError("no specimens left after excluding cells")
    if model_kind == "C" and init.sigma_u == 0.0:
        sv = max(init.sigma_v, 0.02)
        init = init.with_(sigma_v=sv / math.sqrt(2.0), sigma_u=sv / math.sqrt(2.0))
    if model_kind != "A" and init.sigma_v == 0.0:
        init = init.with_(sigma_v=0.05)
    names = free_names(model_kind)
    ll = combined_loglik_fn(dataset, model_kind, quad_order, backend)

    def objective(x):
        nat = dict(zip(names, _to_natural(names, x)))
        try:
            params = init.with_(**nat)
        except (DomainError, OverflowError):
            return -np.inf
        return ll(params)

    start = [getattr(init, n) for n in names]
    est, loglik, cov, diag = _optimise(names, start, objective, n_starts, seed, max_iter)
    params = init.with_(**dict(zip(names, est)))
    if model_kind == "A":
        params = params.with_(p=0.0, sigma_v=0.0)
    diag["n_specimens"] = len(dataset)
    diag["n_obs"] = dataset.n_obs
    return CombinedFit(
        names=names,
        estimates=est,
        full_covariance=cov,
        loglik=float(loglik),
        n_params=len(names),
        model_kind=model_kind,
        diagnostics=diag,
        params=params,
    )
