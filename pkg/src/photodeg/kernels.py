"""Numeric hot spots, each with a numba and a pure-numpy implementation.

The public wrappers take ``backend`` ("numba", "numpy" or None for the
default) so callers and tests can pin one.  Both paths compute the same
quantities with the same summation order per segment; results agree to
rounding.
"""
import math

import numpy as np
from scipy.special import expit

from ._accel import HAVE_NUMBA, njit, prange, resolve_backend

LOG_2PI = math.log(2.0 * math.pi)
_MAX_NEWTON = 100


# ---------------------------------------------------------------------------
# adaptive Gauss-Hermite marginal likelihood
# ---------------------------------------------------------------------------
#
# For a segment s of observations j the integrand is
#   prod_j N(y_j; exp(v) m_j, sigma_eps^2) * N(v; mu_s, sd_s^2)
# and the kernels return its log integral over v.


@njit(cache=True, parallel=True)
def _segment_log_marginal_nb(y, m, starts, ends, mu, sd, sigma_eps, nodes, weights):
    nseg = starts.size
    out = np.empty(nseg)
    K = nodes.size
    inv_s2 = 1.0 / (sigma_eps * sigma_eps)
    log_norm_eps = -0.5 * LOG_2PI - math.log(sigma_eps)
    for s in prange(nseg):
        a = 0.0
        b = 0.0
        n = ends[s] - starts[s]
        for j in range(starts[s], ends[s]):
            a += y[j] * m[j]
            b += m[j] * m[j]
        a *= inv_s2
        b *= inv_s2
        if sd[s] == 0.0:
            ev = math.exp(mu[s])
            rss = 0.0
            for j in range(starts[s], ends[s]):
                r = y[j] - ev * m[j]
                rss += r * r
            out[s] = n * log_norm_eps - 0.5 * rss * inv_s2
            continue
        ip = 1.0 / (sd[s] * sd[s])
        v = mu[s]
        for _ in range(_MAX_NEWTON):
            ev = math.exp(v)
            g = a * ev - b * ev * ev - (v - mu[s]) * ip
            c = -(a * ev - 2.0 * b * ev * ev - ip)
            if c <= 0.0:
                c = b * ev * ev + ip
            step = g / c
            if step > 2.0:
                step = 2.0
            elif step < -2.0:
                step = -2.0
            v += step
            if abs(step) < 1e-13 * (1.0 + abs(v)):
                break
        ev = math.exp(v)
        c = -(a * ev - 2.0 * b * ev * ev - ip)
        if c <= 0.0:
            c = b * ev * ev + ip
        shat = 1.0 / math.sqrt(c)
        terms = np.empty(K)
        tmax = -np.inf
        for k in range(K):
            vk = v + math.sqrt(2.0) * shat * nodes[k]
            evk = math.exp(vk)
            rss = 0.0
            for j in range(starts[s], ends[s]):
                r = y[j] - evk * m[j]
                rss += r * r
            d = vk - mu[s]
            t = math.log(weights[k]) + nodes[k] * nodes[k] - 0.5 * rss * inv_s2 - 0.5 * d * d * ip
            terms[k] = t
            if t > tmax:
                tmax = t
        acc = 0.0
        for k in range(K):
            acc += math.exp(terms[k] - tmax)
        out[s] = (
            n * log_norm_eps
            - 0.5 * LOG_2PI
            - math.log(sd[s])
            + math.log(math.sqrt(2.0) * shat)
            + tmax
            + math.log(acc)
        )
    return out


def _segment_log_marginal_np(y, m, starts, ends, mu, sd, sigma_eps, nodes, weights):
    nseg = starts.size
    lengths = ends - starts
    # expand segments into a flat observation index (segments may share observations)
    seg_of = np.repeat(np.arange(nseg), lengths)
    first = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    obs = np.arange(seg_of.size) - np.repeat(first, lengths) + np.repeat(starts, lengths)
    ye, me = y[obs], m[obs]
    inv_s2 = 1.0 / sigma_eps**2
    log_norm_eps = -0.5 * LOG_2PI - math.log(sigma_eps)

    def segsum(x):
        out = np.zeros(nseg)
        np.add.at(out, seg_of, x)
        return out

    a = segsum(ye * me) * inv_s2
    b = segsum(me * me) * inv_s2
    out = np.empty(nseg)
    fixed = sd == 0.0
    if fixed.any():
        ev = np.exp(mu)[seg_of]
        rss = segsum((ye - ev * me) ** 2)
        out[fixed] = (lengths * log_norm_eps - 0.5 * rss * inv_s2)[fixed]
    free = ~fixed
    if not free.any():
        return out
    sd_f = np.where(free, sd, 1.0)
    ip = 1.0 / sd_f**2
    v = mu.astype(float).copy()
    active = free.copy()
    for _ in range(_MAX_NEWTON):
        ev = np.exp(v)
        g = a * ev - b * ev * ev - (v - mu) * ip
        c = -(a * ev - 2.0 * b * ev * ev - ip)
        c = np.where(c <= 0.0, b * ev * ev + ip, c)
        step = np.clip(g / c, -2.0, 2.0)
        step = np.where(active, step, 0.0)
        v = v + step
        active &= ~(np.abs(step) < 1e-13 * (1.0 + np.abs(v)))
        if not active.any():
            break
    ev = np.exp(v)
    c = -(a * ev - 2.0 * b * ev * ev - ip)
    c = np.where(c <= 0.0, b * ev * ev + ip, c)
    shat = 1.0 / np.sqrt(c)
    vk = v[:, None] + math.sqrt(2.0) * shat[:, None] * nodes[None, :]
    res = ye[:, None] - np.exp(vk)[seg_of] * me[:, None]
    rss = np.zeros((nseg, nodes.size))
    np.add.at(rss, seg_of, res * res)
    d = vk - mu[:, None]
    terms = np.log(weights)[None, :] + (nodes**2)[None, :] - 0.5 * rss * inv_s2 - 0.5 * d * d * ip[:, None]
    tmax = terms.max(axis=1)
    lse = tmax + np.log(np.exp(terms - tmax[:, None]).sum(axis=1))
    val = lengths * log_norm_eps - 0.5 * LOG_2PI - np.log(sd_f) + np.log(math.sqrt(2.0) * shat) + lse
    out[free] = val[free]
    return out


def segment_log_marginal(y, m, starts, ends, mu, sd, sigma_eps, nodes, weights, backend=None):
    """log of int prod_j N(y_j; e^v m_j, sigma_eps^2) N(v; mu_s, sd_s^2) dv per segment.

    Adaptive Gauss-Hermite: nodes are centred on the integrand's mode and
    scaled by its curvature.  ``sd_s == 0`` means no random effect
    (``v = mu_s``).
    """
    backend = resolve_backend(backend)
    args = (
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(m, dtype=np.float64),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(ends, dtype=np.int64),
        np.ascontiguousarray(mu, dtype=np.float64),
        np.ascontiguousarray(sd, dtype=np.float64),
        float(sigma_eps),
        np.ascontiguousarray(nodes, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
    )
    if backend == "numba":
        return _segment_log_marginal_nb(*args)
    return _segment_log_marginal_np(*args)


# ---------------------------------------------------------------------------
# cumulative damage accumulation
# ---------------------------------------------------------------------------
#
# rule 0 ("exact"): each bin integrates the slope in closed form under the
#   bin's covariates: sum_c w_c [F_c(S_end) - F_c(S_start)], F_c = expit(z_c(S)).
# rule 1 ("midpoint"): slope evaluated at S_start + dS/2 times the increment.

RULES = {"exact": 0, "midpoint": 1}


@njit(cache=True)
def _expit_diff(a, b):
    # expit(a) - expit(b) for finite a >= b without cancellation
    return math.sinh(0.5 * (a - b)) / (2.0 * math.cosh(0.5 * a) * math.cosh(0.5 * b))


@njit(cache=True)
def _accumulate_nb(inc, offsets, inv_sigma, scale, rule, omega, s_end):
    nb, nc = inc.shape
    s_cur = 0.0
    total = 0.0
    for k in range(nb):
        ds = 0.0
        for c in range(nc):
            ds += inc[k, c]
        s_prev = s_cur
        s_cur = s_prev + ds
        s_end[k] = s_cur
        if ds > 0.0:
            acc = 0.0
            if rule == 0:
                ls1 = math.log(s_cur) + offsets[k]
                if s_prev > 0.0:
                    ls0 = math.log(s_prev) + offsets[k]
                    for c in range(nc):
                        if inc[k, c] > 0.0:
                            acc += (inc[k, c] / ds) * _expit_diff(ls1 * inv_sigma[c], ls0 * inv_sigma[c])
                else:
                    for c in range(nc):
                        if inc[k, c] > 0.0:
                            z = ls1 * inv_sigma[c]
                            acc += (inc[k, c] / ds) * (1.0 / (1.0 + math.exp(-z)))
            else:
                smid = s_prev + 0.5 * ds
                lm = math.log(smid) + offsets[k]
                for c in range(nc):
                    if inc[k, c] > 0.0:
                        z = lm * inv_sigma[c]
                        e = math.exp(-abs(z))
                        dens = e / ((1.0 + e) * (1.0 + e))
                        acc += dens * inv_sigma[c] / smid * inc[k, c]
            total += scale * acc
        omega[k] = total


def _expit_diff_np(a, b):
    return np.sinh(0.5 * (a - b)) / (2.0 * np.cosh(0.5 * a) * np.cosh(0.5 * b))


def _accumulate_np(inc, offsets, inv_sigma, scale, rule):
    ds = inc.sum(axis=1)
    s_end = np.cumsum(ds)
    s_start = np.concatenate(([0.0], s_end[:-1]))
    pos = ds > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(pos[:, None], inc / np.where(pos, ds, 1.0)[:, None], 0.0)
        if rule == 0:
            ls1 = np.log(np.where(pos, s_end, 1.0)) + offsets
            z1 = ls1[:, None] * inv_sigma[None, :]
            first = s_start <= 0.0
            ls0 = np.log(np.where(first, 1.0, s_start)) + offsets
            z0 = ls0[:, None] * inv_sigma[None, :]
            diff = np.where(first[:, None], expit(z1), _expit_diff_np(z1, z0))
            d_omega = (w * diff).sum(axis=1)
        else:
            smid = np.where(pos, s_start + 0.5 * ds, 1.0)
            z = (np.log(smid) + offsets)[:, None] * inv_sigma[None, :]
            e = np.exp(-np.abs(z))
            dens = e / (1.0 + e) ** 2
            d_omega = (dens * inv_sigma[None, :] * inc).sum(axis=1) / smid
    d_omega = np.where(pos, scale * d_omega, 0.0)
    return np.cumsum(d_omega), s_end


def accumulate_damage(inc, offsets, inv_sigma, scale, rule="exact", backend=None):
    """Cumulative damage and cumulative effective dosage at the end of each bin.

    Parameters
    ----------
    inc : (n_bins, n_cells) array
        Incremental effective dosage per bin and wavelength cell.
    offsets : (n_bins,) array
        Environment term of the standardised dosage for each bin.
    inv_sigma : (n_cells,) array
        1 / sigma_lambda per cell.
    scale : float
        alpha * exp(v).
    """
    backend = resolve_backend(backend)
    inc = np.ascontiguousarray(inc, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    inv_sigma = np.ascontiguousarray(inv_sigma, dtype=np.float64)
    r = RULES[rule]
    if backend == "numba":
        omega = np.empty(inc.shape[0])
        s_end = np.empty(inc.shape[0])
        _accumulate_nb(inc, offsets, inv_sigma, float(scale), r, omega, s_end)
        return omega, s_end
    return _accumulate_np(inc, offsets, inv_sigma, float(scale), r)


# batch over parameter draws: theta rows hold the 11 fixed effects followed by v
# (alpha, beta_lambda, p, ea_over_r, beta_rh, rh0, eta0, b353, sigma0, sigma1, sigma2, v)


@njit(cache=True, parallel=True)
def _accumulate_batch_nb(raw, centers, temp_k, rh, theta, rule, out):
    B = theta.shape[0]
    nb, nc = raw.shape
    for b in prange(B):
        alpha = theta[b, 0]
        beta_l = theta[b, 1]
        ea = theta[b, 3]
        beta_rh = theta[b, 4]
        rh0 = theta[b, 5]
        eta0 = theta[b, 6]
        s0 = theta[b, 8]
        s1 = theta[b, 9]
        s2 = theta[b, 10]
        v = theta[b, 11]
        inc = np.empty((nb, nc))
        for k in range(nb):
            for c in range(nc):
                inc[k, c] = raw[k, c] * math.exp(beta_l * centers[c])
        offs = np.empty(nb)
        for k in range(nb):
            d = rh[k] - rh0
            offs[k] = eta0 - ea / temp_k[k] - beta_rh * d * d
        inv_sigma = np.empty(nc)
        for c in range(nc):
            inv_sigma[c] = 1.0 / (s0 + math.exp(s1 + s2 * centers[c]))
        omega = np.empty(nb)
        s_end = np.empty(nb)
        _accumulate_nb(inc, offs, inv_sigma, alpha * math.exp(v), rule, omega, s_end)
        for k in range(nb):
            out[b, k] = omega[k]


def accumulate_damage_batch(raw, centers, temp_c, rh, theta, rule="exact", backend=None):
    """Damage paths for many parameter vectors on one binned history (ND = 100%)."""
    backend = resolve_backend(backend)
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    temp_k = np.ascontiguousarray(temp_c, dtype=np.float64) + 273.15
    rh = np.ascontiguousarray(rh, dtype=np.float64)
    theta = np.ascontiguousarray(np.atleast_2d(theta), dtype=np.float64)
    r = RULES[rule]
    out = np.empty((theta.shape[0], raw.shape[0]))
    if backend == "numba":
        _accumulate_batch_nb(raw, centers, temp_k, rh, theta, r, out)
        return out
    for b, th in enumerate(theta):
        inc = raw * np.exp(th[1] * centers)[None, :]
        offs = th[6] - th[3] / temp_k - th[4] * (rh - th[5]) ** 2
        inv_sigma = 1.0 / (th[8] + np.exp(th[9] + th[10] * centers))
        out[b], _ = _accumulate_np(inc, offs, inv_sigma, th[0] * math.exp(th[11]), r)
    return out


__all__ = [
    "HAVE_NUMBA",
    "accumulate_damage",
    "accumulate_damage_batch",
    "segment_log_marginal",
]
