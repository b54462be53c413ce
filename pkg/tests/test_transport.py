import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq, linear_sum_assignment
from scipy.stats import norm

from robustcert.mixtures import GaussianMixture, gmm_sample
from robustcert.transport import (
    EmpiricalMeasure,
    TransportError,
    assignment_cost_matrix,
    gmm_cdf_1d,
    kl_mc,
    kl_mc_gmm,
    pinsker_chain_bound,
    tv_distance_1d,
    w1_1d_gmm,
    w1_clouds,
    w1_empirical,
    w1_empirical_large,
    w1_gmm_vs_samples_1d,
    w1_sorted_1d,
)


def brute_force_w1(a, b):
    n = len(a)
    c = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return min(c[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def gauss(mu, sd):
    return GaussianMixture([1.0], [[mu]], [[[sd * sd]]])


@pytest.mark.parametrize("rounded", [False, True])
def test_assignment_matches_brute_force(rounded):
    rng = np.random.default_rng(0 if rounded else 1)
    for _ in range(150):
        n, d = rng.integers(1, 8), rng.integers(1, 4)
        a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        if rounded:
            a, b = np.round(a), np.round(b)
        dist, plan = w1_empirical(a, b)
        assert abs(dist - brute_force_w1(a, b)) <= 1e-12
        assert sorted(plan.assignment.tolist()) == list(range(n))


def test_potentials_are_an_optimal_dual():
    rng = np.random.default_rng(2)
    for n in (5, 40, 300):
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        dist, plan = w1_empirical(a, b)
        c = np.linalg.norm(a[:, None] - b[None], axis=2)
        slack = c - plan.phi[:, None] - plan.psi[None, :]
        assert slack.min() >= -1e-12
        assert np.abs(slack[np.arange(n), plan.assignment]).max() <= 1e-12
        assert plan.dual_objective == pytest.approx(dist, abs=1e-12)


def test_assignment_matches_scipy_on_larger_problems():
    rng = np.random.default_rng(3)
    for n in (50, 400):
        c = rng.random((n, n))
        col, _, _ = assignment_cost_matrix(c)
        r, s = linear_sum_assignment(c)
        assert c[np.arange(n), col].sum() == pytest.approx(c[r, s].sum(), abs=1e-10)


def test_sorted_coupling_agrees_with_assignment_in_1d():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = rng.integers(1, 60)
        a, b = rng.normal(size=n), rng.exponential(size=n)
        assert w1_sorted_1d(a, b) == pytest.approx(w1_empirical(a[:, None], b[:, None])[0], abs=1e-12)


points = st.integers(1, 12).flatmap(
    lambda n: st.tuples(*[st.lists(st.floats(-5, 5), min_size=2 * n, max_size=2 * n) for _ in range(3)]))


@given(points)
def test_w1_is_a_metric_on_equal_size_clouds(clouds):
    a, b, c = (np.array(v).reshape(-1, 2) for v in clouds)
    ab, ba = w1_clouds(a, b), w1_clouds(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert w1_clouds(a, a) == pytest.approx(0.0, abs=1e-12)
    assert ab <= w1_clouds(a, c) + w1_clouds(c, b) + 1e-9


@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_translation_costs_its_length(seed, dx, dy):
    a = np.random.default_rng(seed).normal(size=(15, 2))
    assert w1_clouds(a, a + [dx, dy]) == pytest.approx(np.hypot(dx, dy), abs=1e-9)


def test_input_validation():
    a = np.zeros((4, 2))
    with pytest.raises(TransportError):
        w1_empirical(a, np.zeros((5, 2)))
    with pytest.raises(TransportError):
        w1_empirical(a, np.zeros((4, 3)))
    with pytest.raises(TransportError):
        w1_empirical(np.zeros((10, 1)), np.ones((10, 1)), cap=8)
    assert w1_empirical(np.zeros((10, 1)), np.ones((10, 1)), cap=8, subsample=True, rng_seed=0)[0] == 1.0
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([[np.nan, 0.0]]))
    with pytest.raises(TransportError):
        assignment_cost_matrix(np.array([[0.0, np.inf], [1.0, 2.0]]))


def test_batched_estimator():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(300, 2)), rng.normal(size=(300, 2)) + 1.0
    exact = w1_empirical(a, b)[0]
    est, se = w1_empirical_large(a, b, batch=300, reps=1)
    assert est == exact and np.isnan(se)
    serial = w1_empirical_large(a, b, batch=100, reps=6, rng_seed=1, workers=1)
    threaded = w1_empirical_large(a, b, batch=100, reps=6, rng_seed=1, workers=4)
    assert serial == threaded
    # small batches overshoot on average
    assert serial[0] >= exact - 3 * serial[1]


def test_gaussian_closed_forms():
    assert w1_1d_gmm(gauss(0.3, 0.7), gauss(-1.2, 0.7)) == pytest.approx(1.5, abs=1e-8)
    assert w1_1d_gmm(gauss(0, 1), gauss(0, 2)) == pytest.approx(np.sqrt(2 / np.pi), abs=1e-8)
    d = 0.8
    assert tv_distance_1d(gauss(0, 1), gauss(d, 1)) == pytest.approx(2 * norm.cdf(d / 2) - 1, abs=1e-8)
    assert tv_distance_1d(gauss(0, 1), gauss(40, 1)) == pytest.approx(1.0, abs=1e-8)


def quantile_oracle(g1, g2, m=200_000):
    # W1 in 1D equals the L1 distance of the quantile functions
    u = (np.arange(m) + 0.5) / m
    def q(g, p):
        return brentq(lambda x: gmm_cdf_1d(g, x) - p, -50, 50, xtol=1e-14)
    qs = np.array([[q(g1, p), q(g2, p)] for p in u[:: m // 2000]])
    return np.mean(np.abs(qs[:, 0] - qs[:, 1]))


def test_mixture_w1_against_quantiles():
    g1 = GaussianMixture([0.3, 0.7], [[-1.0], [1.0]], [[[0.04]], [[0.25]]])
    g2 = GaussianMixture([0.5, 0.5], [[-0.5], [1.5]], [[[0.09]], [[0.01]]])
    assert w1_1d_gmm(g1, g2) == pytest.approx(quantile_oracle(g1, g2), abs=2e-3)


def test_hybrid_w1_against_brute_force_integral():
    g = GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[[0.09]], [[0.09]]])
    s = gmm_sample(g, 300, 0)[:, 0] + 0.05
    x = np.linspace(-12, 12, 2_000_001)
    ecdf = np.searchsorted(np.sort(s), x, side="right") / s.size
    brute = np.trapezoid(np.abs(gmm_cdf_1d(g, x) - ecdf), x)
    assert w1_gmm_vs_samples_1d(g, s) == pytest.approx(brute, abs=1e-5)


def test_hybrid_w1_converges_to_mixture_w1():
    g1, g2 = gauss(0, 1), gauss(0.5, 1.5)
    s = gmm_sample(g2, 200_000, 1)[:, 0]
    assert w1_gmm_vs_samples_1d(g1, s) == pytest.approx(w1_1d_gmm(g1, g2), abs=0.01)


def test_kl_monte_carlo_gaussians():
    m1, s1, m2, s2 = 0.2, 0.8, -0.5, 1.3
    exact = np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5
    est, se = kl_mc_gmm(gauss(m1, s1), gauss(m2, s2), 100_000, 0)
    assert abs(est - exact) <= 4 * se


def test_kl_errors():
    with pytest.raises(ValueError):
        kl_mc_gmm(gauss(0, 1), gauss(0, 1), 10)
    with pytest.raises(FloatingPointError, match="sample"):
        kl_mc(lambda n, rng: rng.normal(size=(n, 1)), lambda x: np.zeros(len(x)),
              lambda x: np.where(x[:, 0] > 0, -np.inf, 0.0), 200, 0)


def test_pinsker_chain():
    assert pinsker_chain_bound(0.5, 4.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        pinsker_chain_bound(-0.1, 1.0)


def test_plan_json():
    _, plan = w1_empirical(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]]))
    d = json.loads(plan.to_json())
    assert d["assignment"] == [1, 0] and d["cost"] == 0.0
