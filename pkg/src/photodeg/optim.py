"""Quasi-Newton maximisation of smooth objectives with numerical derivatives.

The objective is first whitened with a finite-difference Hessian so that a
unit step is roughly one standard error in every direction; BFGS then runs
in the whitened coordinates and a few Newton steps polish the optimum.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConvergenceError

log = logging.getLogger(__name__)


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    hessian: np.ndarray
    grad: np.ndarray
    n_eval: int
    n_iter: int
    converged: bool
    hessian_pd: bool
    start_values: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def grad_norm(self):
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


class _Counted:
    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, x):
        self.n += 1
        val = float(self.f(x))
        return val if np.isfinite(val) else -np.inf


def fd_gradient(f, x, h):
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h[i])
    return g


def fd_hessian(f, x, h, f0=None):
    """Central-difference Hessian with per-coordinate steps ``h``."""
    n = x.size
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    f0 = f(x) if f0 is None else f0
    H = np.empty((n, n))
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i] = f(x + e)
        fm[i] = f(x - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return H


def _curvature_steps(f, x, f0, target=1.0, max_rounds=8):
    """Per-coordinate step giving a second difference of about ``target``."""
    h = 1e-3 * np.maximum(np.abs(x), 1e-2)
    for i in range(x.size):
        for _ in range(max_rounds):
            e = np.zeros_like(x)
            e[i] = h[i]
            c = abs(f(x + e) + f(x - e) - 2.0 * f0)
            if not np.isfinite(c):
                h[i] *= 0.1
                continue
            if c == 0.0:
                h[i] *= 10.0
                continue
            ratio = np.sqrt(target / c)
            h[i] *= np.clip(ratio, 0.01, 100.0)
            if 0.3 < ratio < 3.0:
                break
    return h


def _whitening(H, scale):
    """Map whitened steps y to x-steps so that -H becomes roughly the identity."""
    A = -(H * scale[:, None] * scale[None, :])
    A = 0.5 * (A + A.T)
    lam, V = np.linalg.eigh(A)
    lam = np.abs(lam)
    lam = np.maximum(lam, max(lam.max(), 1e-12) * 1e-10)
    return scale[:, None] * (V / np.sqrt(lam)[None, :])


def _bfgs(f, x0, T, gtol, max_iter, step):
    """Maximise f(x0 + T y) over y with BFGS and central FD gradients."""

    def neg(y):
        return -f(x0 + T @ y)

    def grad(y):
        return -fd_gradient(lambda z: f(x0 + T @ z), y, step)

    res = optimize.minimize(
        neg, np.zeros(T.shape[1]), jac=grad, method="BFGS", options={"gtol": gtol, "maxiter": max_iter, "norm": np.inf}
    )
    return x0 + T @ res.x, -res.fun, res.nit, res.nit >= max_iter


def _newton_polish(f, x, T, step, rounds=4, gtol=1e-6):
    fx = f(x)
    g = None
    for _ in range(rounds):
        g_fun = lambda z: f(x + T @ z)  # noqa: E731
        zero = np.zeros(T.shape[1])
        g = fd_gradient(g_fun, zero, step)
        if np.max(np.abs(g)) < gtol:
            break
        H = fd_hessian(g_fun, zero, 10 * step, fx)
        try:
            d = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        improved = False
        while t > 1e-4:
            xn = x + T @ (t * d)
            fn = f(xn)
            if fn >= fx:
                x, fx, improved = xn, fn, True
                break
            t *= 0.5
        if not improved:
            break
    return x, fx


def maximize(
    f,
    x0,
    *,
    n_starts=5,
    jitter=0.5,
    seed=0,
    max_iter=500,
    gtol=1e-6,
    accept_gtol=1e-3,
    fd_step=1e-3,
    scale=None,
    max_rounds=4,
    round_tol=1e-6,
):
    """Maximise ``f`` from ``x0`` with jittered restarts.

    Parameters
    ----------
    f : callable
        Objective on an unconstrained vector; non-finite values are rejections.
    jitter : float
        Start perturbation in whitened units (about one standard error per unit).
    scale : array, optional
        Initial per-coordinate scale guess; estimated from the curvature if omitted.
    max_rounds : int
        Re-whitening rounds after the first BFGS run of each start; rounds
        stop once the objective gains less than ``round_tol``.

    Returns
    -------
    OptimResult
        ``hessian`` is the Hessian of ``f`` in the original coordinates.
    """
    fc = _Counted(f)
    x0 = np.asarray(x0, dtype=float)
    f0 = fc(x0)
    if not np.isfinite(f0):
        raise ConvergenceError("objective is not finite at the starting point", [])
    h = _curvature_steps(fc, x0, f0) if scale is None else np.asarray(scale, dtype=float)
    T = _whitening(fd_hessian(fc, x0, h, f0), h)
    rng = np.random.default_rng(seed)
    trace = []
    best = None
    starts = [x0] + [x0 + T @ rng.normal(0.0, jitter, x0.size) for _ in range(max(n_starts, 1) - 1)]
    total_iter = 0
    for k, xs in enumerate(starts):
        if not np.isfinite(fc(xs)):
            trace.append({"start": k, "status": "rejected"})
            continue
        x, fx, nit, capped = _bfgs(fc, xs, T, gtol, max_iter, fd_step)
        iters = nit
        Tk = T
        # re-whiten where BFGS stopped: the start curvature can be far off on curved surfaces
        for _ in range(max_rounds):
            hk = np.sqrt(np.sum(Tk * Tk, axis=1))
            Tk = _whitening(fd_hessian(fc, x, 0.1 * hk, fx), hk)
            x_new, f_new, nit, capped = _bfgs(fc, x, Tk, gtol, max_iter, fd_step)
            iters += nit
            gain = f_new - fx
            if f_new >= fx:
                x, fx = x_new, f_new
            if gain < round_tol:
                break
        total_iter += iters
        trace.append({"start": k, "loglik": fx, "iterations": iters, "hit_max_iter": capped})
        log.debug("start %d: objective %.6f after %d iterations", k, fx, iters)
        if best is None or fx > best[1]:
            best = (x, fx, Tk, capped)
    if best is None:
        raise ConvergenceError("every start was rejected", trace)
    x, fx, Tk, capped = best
    x, fx = _newton_polish(fc, x, Tk, fd_step, gtol=gtol)
    # difference steps lost below float resolution: the parameters ran away
    if not np.all(np.isfinite(x)) or np.any(x + fd_step * np.max(np.abs(Tk), axis=1) == x):
        raise ConvergenceError("parameters diverged beyond floating-point resolution", trace)
    # final curvature in whitened coordinates, mapped back
    zero = np.zeros(x.size)
    g_w = fd_gradient(lambda z: fc(x + Tk @ z), zero, fd_step)
    Hw = fd_hessian(lambda z: fc(x + Tk @ z), zero, 1e-2, fx)
    Tinv = np.linalg.inv(Tk)
    H = Tinv.T @ Hw @ Tinv
    H = 0.5 * (H + H.T)
    grad = Tinv.T @ g_w
    pd = bool(np.all(np.linalg.eigvalsh(-Hw) > 0))
    converged = float(np.max(np.abs(g_w))) < accept_gtol
    if not converged:
        if capped:
            raise ConvergenceError(
                f"no convergence after {total_iter} iterations (whitened gradient {np.max(np.abs(g_w)):.3g})", trace
            )
        warnings.warn(f"optimizer stopped with whitened gradient {np.max(np.abs(g_w)):.3g}", RuntimeWarning, stacklevel=2)
    return OptimResult(
        x=x,
        fun=fx,
        hessian=H,
        grad=grad,
        n_eval=fc.n,
        n_iter=total_iter,
        converged=converged,
        hessian_pd=pd,
        start_values=[t.get("loglik") for t in trace],
        trace=trace,
    )


def covariance_from_hessian(H):
    """Inverse observed information; pseudo-inverse when not positive definite.

    Returns ``(cov, is_pd)``.
    """
    info = -0.5 * (H + H.T)
    lam = np.linalg.eigvalsh(info)
    if np.all(lam > 0):
        return np.linalg.inv(info), True
    warnings.warn("observed information is not positive definite; using the pseudo-inverse", RuntimeWarning, stacklevel=2)
    return np.linalg.pinv(info, hermitian=True), False
