"""Marginal likelihood of the nonlinear mixed-effects degradation models.

Model kinds
-----------
A  no random effect and no extra ND exponent (p fixed at 0)
B  one multiplicative random effect per specimen, v ~ N(0, sigma_v^2)
C  nested effects v = u_group + w_specimen, u ~ N(0, sigma_u^2), w ~ N(0, sigma_v^2)

The random effect integrals use adaptive Gauss-Hermite quadrature; the
nested model integrates each specimen over w inside a group-level rule over
u whose centre and scale come from a Gaussian approximation of each
specimen's likelihood in v.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DomainError
from .kernels import segment_log_marginal
from .path import FIXED_NAMES, CombinedParams

MODEL_KINDS = ("A", "B", "C")
DEFAULT_QUAD_ORDER = 15
DEFAULT_NESTED_ORDER = (9, 9)


@lru_cache(maxsize=None)
def gauss_hermite(order):
    nodes, weights = np.polynomial.hermite.hermgauss(int(order))
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


@dataclass(frozen=True)
class StackedData:
    """Observations of a dataset flattened for vectorised likelihood evaluation."""

    y: np.ndarray
    log_d: np.ndarray
    spec: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    bp: np.ndarray
    nd: np.ndarray
    temp_c: np.ndarray
    rh: np.ndarray
    group: np.ndarray
    n_groups: int
    ids: tuple

    @property
    def n_spec(self):
        return self.starts.size


def stack(dataset):
    ys, lds, specs, starts, ends = [], [], [], [], []
    pos = 0
    for i, s in enumerate(dataset.specimens):
        d = s.dosage_at_measurements()
        with np.errstate(divide="ignore"):
            lds.append(np.log(d))
        ys.append(s.y)
        specs.append(np.full(s.n, i))
        starts.append(pos)
        pos += s.n
        ends.append(pos)
    groups = [s.group_id or s.id for s in dataset.specimens]
    uniq = {g: k for k, g in enumerate(dict.fromkeys(groups))}
    cond = [s.conditions for s in dataset.specimens]
    cat = np.concatenate if ys else (lambda a: np.zeros(0))
    return StackedData(
        y=cat(ys).astype(float),
        log_d=cat(lds).astype(float),
        spec=cat(specs).astype(np.int64),
        starts=np.asarray(starts, dtype=np.int64),
        ends=np.asarray(ends, dtype=np.int64),
        bp=np.array([c.bp for c in cond], dtype=np.int64),
        nd=np.array([c.nd for c in cond], dtype=float),
        temp_c=np.array([c.temp_c for c in cond], dtype=float),
        rh=np.array([c.rh for c in cond], dtype=float),
        group=np.array([uniq[g] for g in groups], dtype=np.int64),
        n_groups=len(uniq),
        ids=tuple(s.id for s in dataset.specimens),
    )


def mean_paths(data, alpha, offsets, sigmas):
    """Population (v = 0) path at every observation."""
    z = (data.log_d + offsets[data.spec]) / sigmas[data.spec]
    return alpha * expit(z)


def contributions(data, m, sigma_v, sigma_eps, kind, quad_order=None, sigma_u=0.0, backend=None):
    """Per-specimen (A, B) or per-group (C) log-likelihood contributions."""
    if kind not in MODEL_KINDS:
        raise DomainError(f"unknown model kind {kind!r}")
    if not sigma_eps > 0:
        return np.full(data.n_spec, -np.inf)
    ns = data.n_spec
    if kind == "A" or (kind == "B" and sigma_v == 0.0):
        nodes, weights = gauss_hermite(1)
        return segment_log_marginal(
            data.y, m, data.starts, data.ends, np.zeros(ns), np.zeros(ns), sigma_eps, nodes, weights, backend
        )
    if kind == "B":
        order = quad_order or DEFAULT_QUAD_ORDER
        nodes, weights = gauss_hermite(order)
        return segment_log_marginal(
            data.y, m, data.starts, data.ends, np.zeros(ns), np.full(ns, sigma_v), sigma_eps, nodes, weights, backend
        )
    outer, inner = _nested_orders(quad_order)
    return _nested_contributions(data, m, sigma_v, sigma_u, sigma_eps, outer, inner, backend)


def _nested_orders(quad_order):
    if quad_order is None:
        return DEFAULT_NESTED_ORDER
    if np.ndim(quad_order) == 0:
        return int(quad_order), int(quad_order)
    outer, inner = quad_order
    return int(outer), int(inner)


def _nested_contributions(data, m, sigma_w, sigma_u, sigma_eps, outer, inner, backend):
    ng = data.n_groups
    if sigma_u == 0.0:
        # no group effect: groups are products of independent specimen integrals
        per_spec = contributions(data, m, sigma_w, sigma_eps, "B", inner, backend=backend)
        return np.bincount(data.group, weights=per_spec, minlength=ng)
    # Gaussian approximation of each specimen likelihood in v: mode log(a/b), variance b/a^2
    a = np.bincount(data.spec, weights=data.y * m, minlength=data.n_spec) / sigma_eps**2
    b = np.bincount(data.spec, weights=m * m, minlength=data.n_spec) / sigma_eps**2
    informative = (a > 0) & (b > 0)
    safe_a = np.where(informative, a, 1.0)
    safe_b = np.where(informative, b, 1.0)
    v_tilde = np.where(informative, np.log(safe_a / safe_b), 0.0)
    prec_i = np.where(informative, 1.0 / (sigma_w**2 + safe_b / safe_a**2), 0.0)
    prec = 1.0 / sigma_u**2 + np.bincount(data.group, weights=prec_i, minlength=ng)
    u_hat = np.bincount(data.group, weights=prec_i * v_tilde, minlength=ng) / prec
    s_hat = 1.0 / np.sqrt(prec)
    xo, wo = gauss_hermite(outer)
    xi, wi = gauss_hermite(inner)
    u_nodes = u_hat[:, None] + math.sqrt(2.0) * s_hat[:, None] * xo[None, :]  # (ng, K)
    K = xo.size
    ns = data.n_spec
    seg_starts = np.repeat(data.starts, K)
    seg_ends = np.repeat(data.ends, K)
    mu = u_nodes[data.group].reshape(-1)
    inner_ll = segment_log_marginal(
        data.y, m, seg_starts, seg_ends, mu, np.full(ns * K, sigma_w), sigma_eps, xi, wi, backend
    ).reshape(ns, K)
    summed = np.zeros((ng, K))
    np.add.at(summed, data.group, inner_ll)
    log_prior = -0.5 * math.log(2 * math.pi) - math.log(sigma_u) - 0.5 * (u_nodes / sigma_u) ** 2
    terms = np.log(wo)[None, :] + (xo**2)[None, :] + log_prior + summed
    return np.log(math.sqrt(2.0) * s_hat) + logsumexp(terms, axis=1)


# ---------------------------------------------------------------------------
# combined model
# ---------------------------------------------------------------------------

BP_LAMBDA = {306: 306.0, 326: 326.0, 353: 353.0, 452: 452.0}


def combined_terms(params, data, splits):
    """(alpha, offsets, sigmas) per specimen for the combined model."""
    spectral = np.empty(data.n_spec)
    for bp in np.unique(data.bp):
        mask = data.bp == bp
        if bp == 353:
            spectral[mask] = params.b353
        else:
            spectral[mask] = splits[int(bp)].log_weight(params.beta_lambda)
    offsets = spectral + params.environment_term(data.temp_c, data.rh, data.nd)
    lam = np.array([BP_LAMBDA.get(int(b), float(b)) for b in data.bp])
    sigmas = params.sigma_lambda(lam)
    return params.alpha, offsets, sigmas


def marginal_loglik(params, dataset, model_kind="B", quad_order=None, backend=None, data=None):
    """Marginal log-likelihood of the combined model.

    Model A ignores ``params.sigma_v`` and ``params.p`` (both fixed at 0);
    model C reads the group SD from ``params.sigma_u`` and the specimen SD
    from ``params.sigma_v``.  Returns ``-inf`` for invalid parameters.
    """
    if model_kind not in MODEL_KINDS:
        raise DomainError(f"unknown model kind {model_kind!r}")
    if quad_order is not None and np.min(quad_order) < 5:
        raise DomainError("quadrature order must be at least 5")
    data = stack(dataset) if data is None else data
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


def combined_names(kind):
    names = list(FIXED_NAMES) + ["sigma_v", "sigma_eps"]
    if kind == "C":
        names.append("sigma_u")
    return tuple(names)


def params_from_vector(names, values, base=None):
    kw = dict(zip(names, map(float, values)))
    if base is not None:
        full = base.as_dict()
        full.update(kw)
        kw = full
    return CombinedParams(**kw)
