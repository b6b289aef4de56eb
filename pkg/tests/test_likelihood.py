import numpy as np
import pytest
from scipy.special import logsumexp

from photodeg import TABLE4
from photodeg.errors import DomainError
from photodeg.likelihood import (
    combined_terms,
    contributions,
    gauss_hermite,
    marginal_loglik,
    mean_paths,
    stack,
)
from photodeg.sim import AccelDesign, DesignCell, simulate_accel

from conftest import dense_log_marginal, stacked_data


@pytest.fixture(scope="module")
def small_data():
    cells = [DesignCell(bp, 1.0, 35.0, 25.0, 3) for bp in (306, 326, 353, 452)]
    design = AccelDesign(cells=tuple(cells), schedule=84.0 * np.arange(1, 13), seed=3, sigma_v=0.15, sigma_eps=0.01)
    return simulate_accel(design, TABLE4)


def _paths(ds, params=TABLE4):
    data = stack(ds)
    alpha, offsets, sigmas = combined_terms(params, data, ds.splits)
    return data, mean_paths(data, alpha, offsets, sigmas)


def test_gauss_hermite_integrates_polynomials():
    nodes, weights = gauss_hermite(15)
    # int x^4 exp(-x^2) dx = 3 sqrt(pi) / 4
    assert np.sum(weights * nodes**4) == pytest.approx(0.75 * np.sqrt(np.pi), rel=1e-13)


def test_single_observation_matches_dense_oracle(backend):
    y, m = np.array([-0.21]), np.array([-0.18])
    data = stacked_data([y])
    oracle = dense_log_marginal(y, m, 0.3, 0.02)
    # one observation leaves a flat tail in v, so the 1e-8 target needs order 20
    got = contributions(data, m, 0.3, 0.02, "B", quad_order=20, backend=backend)[0]
    assert got == pytest.approx(oracle, abs=1e-8)
    default = contributions(data, m, 0.3, 0.02, "B", backend=backend)[0]
    assert default == pytest.approx(oracle, abs=1e-7)


def test_per_specimen_dense_oracle(small_data, backend):
    data, m = _paths(small_data)
    got = contributions(data, m, 0.15, 0.01, "B", quad_order=15, backend=backend)
    for i in range(data.n_spec):
        sl = slice(data.starts[i], data.ends[i])
        assert got[i] == pytest.approx(dense_log_marginal(data.y[sl], m[sl], 0.15, 0.01), abs=1e-6)


def test_sigma_v_limit_equals_model_a(small_data, backend):
    params = TABLE4.with_(p=0.0)
    a = marginal_loglik(params.with_(sigma_v=0.0), small_data, "A", backend=backend)
    b = marginal_loglik(params.with_(sigma_v=1e-8), small_data, "B", backend=backend)
    assert abs(a - b) < 1e-6


def test_quadrature_refinement(small_data, backend):
    lo = marginal_loglik(TABLE4, small_data, "B", quad_order=10, backend=backend)
    hi = marginal_loglik(TABLE4, small_data, "B", quad_order=40, backend=backend)
    assert abs(lo - hi) < 1e-6


def test_backends_agree(small_data):
    pytest.importorskip("numba")
    from photodeg._accel import HAVE_NUMBA

    if not HAVE_NUMBA:
        pytest.skip("numba disabled")
    for kind, params in (("A", TABLE4), ("B", TABLE4), ("C", TABLE4.with_(sigma_u=0.05))):
        a = marginal_loglik(params, small_data, kind, backend="numpy")
        b = marginal_loglik(params, small_data, kind, backend="numba")
        assert a == pytest.approx(b, abs=1e-10)


def test_invariant_to_specimen_order(small_data):
    rev = type(small_data)(tuple(reversed(small_data.specimens)), splits=small_data.splits)
    for kind, params in (("B", TABLE4), ("C", TABLE4.with_(sigma_u=0.05))):
        a = marginal_loglik(params, small_data, kind)
        b = marginal_loglik(params, rev, kind)
        assert a == pytest.approx(b, abs=1e-10)


def test_nested_model_against_two_dimensional_oracle(backend):
    rng = np.random.default_rng(5)
    m = [np.linspace(-0.05, -0.4, 6), np.linspace(-0.1, -0.5, 6), np.linspace(-0.02, -0.3, 6)]
    sigma_u, sigma_w, sigma_eps = 0.12, 0.08, 0.02
    u = sigma_u * rng.standard_normal()
    ys = [mi * np.exp(u + sigma_w * rng.standard_normal()) + sigma_eps * rng.standard_normal(6) for mi in m]
    data = stacked_data(ys, groups=[0, 0, 0])
    got = contributions(data, np.concatenate(m), sigma_w, sigma_eps, "C", quad_order=(15, 15), sigma_u=sigma_u, backend=backend)
    assert got.shape == (1,)
    # dense oracle: outer trapezoid over u of the product of inner integrals over w
    us = np.linspace(-8 * sigma_u, 8 * sigma_u, 1601)
    inner = np.zeros(us.size)
    for y, mi in zip(ys, m):
        inner += np.array([dense_log_marginal(y, mi * np.exp(uk), sigma_w, sigma_eps, n=4001) for uk in us])
    logprior = -0.5 * (us / sigma_u) ** 2 - np.log(sigma_u * np.sqrt(2 * np.pi))
    w = np.full(us.size, us[1] - us[0])
    w[[0, -1]] *= 0.5
    oracle = float(logsumexp(inner + logprior, b=w))
    assert got[0] == pytest.approx(oracle, abs=1e-5)


def test_nested_reduces_to_model_b_without_group_effect(small_data):
    b = marginal_loglik(TABLE4, small_data, "B")
    c = marginal_loglik(TABLE4.with_(sigma_u=1e-9), small_data, "C")
    assert c == pytest.approx(b, abs=1e-5)


def test_low_order_rejected(small_data):
    with pytest.raises(DomainError):
        marginal_loglik(TABLE4, small_data, "B", quad_order=4)


def test_invalid_parameters_give_minus_infinity(small_data):
    assert marginal_loglik(TABLE4.with_(sigma0=-1.0), small_data, "B") == -np.inf
    assert marginal_loglik(TABLE4.with_(sigma_eps=0.0), small_data, "B") == -np.inf
