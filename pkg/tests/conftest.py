import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.special import logsumexp

from photodeg import TABLE4
from photodeg._accel import HAVE_NUMBA
from photodeg.fitting import CombinedFit, fit_combined
from photodeg.likelihood import StackedData
from photodeg.path import FIXED_NAMES, TABLE4_SE
from photodeg.sim import AccelDesign, DesignCell, simulate_accel, table2_design

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=40)
settings.load_profile("default")

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])

#: Pass/fail lines collected by the acceptance suite and printed at the end of the run.
ACCEPTANCE_LINES = []


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def table2_data():
    """The 319-specimen laboratory design simulated at the combined-model truth."""
    return simulate_accel(table2_design(seed=2024), TABLE4)


@pytest.fixture(scope="session")
def table2_fit(table2_data):
    """Model B fitted to ``table2_data`` through the categorical stage."""
    return fit_combined(table2_data, model_kind="B", n_starts=5, seed=0)


@pytest.fixture(scope="session")
def small_design():
    """One replicate in a spread of cells: quick to fit yet identifiable."""
    cells = [
        DesignCell(bp, nd, t, rh, 2)
        for bp in (306, 326, 353, 452)
        for nd, t, rh in ((1.0, 35.0, 25.0), (0.1, 35.0, 25.0), (1.0, 25.0, 0.0), (1.0, 45.0, 50.0), (0.4, 45.0, 75.0))
    ]
    return AccelDesign(cells=tuple(cells), seed=7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def rel_err(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))


def make_fit(params, se_scale=1.0, sigma_v_se=0.005):
    """Model B fit object at ``params`` with a diagonal covariance from published SEs times ``se_scale``."""
    names = tuple(FIXED_NAMES) + ("sigma_v", "sigma_eps")
    se = np.array([TABLE4_SE[n] * se_scale for n in FIXED_NAMES] + [sigma_v_se * se_scale, 0.0])
    est = np.array([getattr(params, n) for n in names])
    return CombinedFit(names, est, np.diag(se**2), 0.0, len(names), "B", params=params)


def stacked_data(ys, groups=None):
    """Minimal stacked data for hand-made observation vectors."""
    lengths = [len(y) for y in ys]
    ends = np.cumsum(lengths)
    starts = ends - lengths
    n = len(ys)
    groups = np.arange(n) if groups is None else np.asarray(groups)
    return StackedData(
        y=np.concatenate(ys).astype(float),
        log_d=np.zeros(int(ends[-1])),
        spec=np.repeat(np.arange(n), lengths),
        starts=starts.astype(np.int64),
        ends=ends.astype(np.int64),
        bp=np.zeros(n, dtype=np.int64),
        nd=np.ones(n),
        temp_c=np.zeros(n),
        rh=np.zeros(n),
        group=groups.astype(np.int64),
        n_groups=int(groups.max()) + 1,
        ids=tuple(map(str, range(n))),
    )


def dense_log_marginal(y, m, sigma_v, sigma_eps, center=0.0, half_width=None, n=200_001):
    """Trapezoid integral over v of prod N(y; m e^v, sigma_eps) N(v; 0, sigma_v^2), on the log scale."""
    half_width = 12 * sigma_v if half_width is None else half_width
    v = np.linspace(center - half_width, center + half_width, n)
    resid = y[None, :] - m[None, :] * np.exp(v)[:, None]
    loglik = -0.5 * np.sum(resid**2, axis=1) / sigma_eps**2 - y.size * np.log(sigma_eps * np.sqrt(2 * np.pi))
    logprior = -0.5 * (v / sigma_v) ** 2 - np.log(sigma_v * np.sqrt(2 * np.pi))
    f = loglik + logprior
    w = np.full(n, v[1] - v[0])
    w[[0, -1]] *= 0.5
    return float(logsumexp(f, b=w))
