import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from robustcert.mixtures import (
    GaussianMixture,
    IllConditionedError,
    LinearGaussianProblem,
    evidence_distribution,
    gmm_density,
    gmm_grad_density,
    gmm_hessian_density,
    gmm_log_density,
    gmm_mean,
    gmm_sample,
    negative_log_likelihood,
    nll_grad_y,
    posterior,
    six_mode_problem,
    two_mode_problem,
)


def random_mixture(rng, k, d):
    w = rng.random(k) + 0.1
    means = rng.normal(0, 2, (k, d))
    covs = []
    for _ in range(k):
        b = rng.normal(size=(d, d))
        covs.append(b @ b.T + 0.3 * np.eye(d))
    return GaussianMixture(w, means, np.array(covs))


def random_problem(rng, m, n, k):
    return LinearGaussianProblem(rng.normal(size=(n, m)), rng.uniform(0.2, 1.0), random_mixture(rng, k, m))


def naive_density(g, x):
    return sum(w * multivariate_normal(m, c).pdf(x) for w, m, c in zip(g.weights, g.means, g.covs))


def test_density_matches_naive_sum():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3):
        g = random_mixture(rng, 3, d)
        x = rng.normal(0, 2, (20, d))
        np.testing.assert_allclose(gmm_density(g, x), naive_density(g, x), rtol=1e-12)


def test_log_density_far_in_the_tail():
    g = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    x = 60.0
    # the density underflows to zero but its logarithm stays exact
    assert gmm_density(g, x) == 0.0
    assert gmm_log_density(g, x) == pytest.approx(-0.5 * x * x - 0.5 * np.log(2 * np.pi), rel=1e-14)


def test_weights_are_normalised():
    g = GaussianMixture([2.0, 6.0], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    np.testing.assert_allclose(g.weights, [0.25, 0.75])


def test_rejects_bad_inputs():
    with pytest.raises(IllConditionedError):
        GaussianMixture([1.0], [[0.0, 0.0]], [np.diag([1.0, 1e-14])])
    with pytest.raises(ValueError):
        GaussianMixture([-1.0, 2.0], [[0.0], [1.0]], [[[1.0]], [[1.0]]])


def test_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(1)
    g = random_mixture(rng, 3, 2)
    h = 1e-5
    for x in rng.normal(0, 1.5, (5, 2)):
        fd = np.array([(gmm_density(g, x + h * e) - gmm_density(g, x - h * e)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(gmm_grad_density(g, x), fd, rtol=1e-6, atol=1e-11)
        fd2 = np.array([(gmm_grad_density(g, x + h * e) - gmm_grad_density(g, x - h * e)) / (2 * h)
                        for e in np.eye(2)])
        np.testing.assert_allclose(gmm_hessian_density(g, x), fd2, rtol=1e-5, atol=1e-10)


def test_sampling_moments():
    rng = np.random.default_rng(2)
    g = random_mixture(rng, 3, 2)
    x = gmm_sample(g, 200_000, 3)
    mean = gmm_mean(g)
    second = sum(w * (c + np.outer(m, m)) for w, m, c in zip(g.weights, g.means, g.covs))
    cov = second - np.outer(mean, mean)
    np.testing.assert_allclose(x.mean(axis=0), mean, atol=5 * np.sqrt(np.max(np.diag(cov)) / 200_000))
    np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.03, atol=0.03)


def test_sampling_is_seed_deterministic():
    g = two_mode_problem(0.3, 0.5).prior
    np.testing.assert_array_equal(gmm_sample(g, 50, 7), gmm_sample(g, 50, 7))


def test_evidence_two_mode_at_zero_is_hand_convolution():
    s, sig = 0.3, 0.5
    a = gmm_density(evidence_distribution(two_mode_problem(s, sig)), 0.0)
    assert a == pytest.approx(norm.pdf(1.0, scale=np.hypot(s, sig)), rel=1e-14)


def test_evidence_equals_quadrature_1d():
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = random_problem(rng, 1, 1, 3)
        g = p.prior
        for y in rng.normal(0, 2, 3):
            f = lambda x: naive_density(g, [x]) * norm.pdf(y, p.forward[0, 0] * x, p.noise_std)
            val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
            assert gmm_density(evidence_distribution(p), y) == pytest.approx(val, abs=1e-8)


def conditioning_oracle(p, y):
    """Posterior by conditioning each joint Gaussian (X, Y) with the Schur complement."""
    a, s2 = p.forward, p.noise_std**2
    w, means, covs = [], [], []
    for wk, m, c in zip(p.prior.weights, p.prior.means, p.prior.covs):
        syy = a @ c @ a.T + s2 * np.eye(a.shape[0])
        gain = c @ a.T @ np.linalg.inv(syy)
        means.append(m + gain @ (y - a @ m))
        covs.append(c - gain @ a @ c)
        w.append(wk * multivariate_normal(a @ m, syy).pdf(y))
    w = np.array(w)
    return w / w.sum(), np.array(means), np.array(covs)


def test_posterior_matches_gaussian_conditioning():
    rng = np.random.default_rng(5)
    for m, n in [(1, 1), (2, 1), (2, 3), (3, 2)]:
        p = random_problem(rng, m, n, 3)
        y = rng.normal(size=n)
        post = posterior(p, y)
        w, means, covs = conditioning_oracle(p, y)
        np.testing.assert_allclose(post.weights, w, rtol=1e-9, atol=1e-14)
        np.testing.assert_allclose(post.means, means, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(post.covs, covs, rtol=1e-8, atol=1e-12)


def test_posterior_far_observation_keeps_weights_finite():
    p = two_mode_problem(0.05, 0.1)
    post = posterior(p, [200.0])
    assert np.all(np.isfinite(post.weights))
    assert post.weights[1] == pytest.approx(1.0)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4))
def test_posterior_weights_form_a_distribution(seed, m, n, k):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, m, n, k)
    post = posterior(p, rng.normal(0, 3, n))
    assert np.all(post.weights >= 0)
    assert post.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.linalg.eigvalsh(post.covs) > 0)


def test_nll_and_its_gradient():
    rng = np.random.default_rng(6)
    p = random_problem(rng, 2, 3, 1)
    x, y = rng.normal(size=2), rng.normal(size=3)
    expected = -multivariate_normal(p.forward @ x, p.noise_std**2 * np.eye(3)).logpdf(y)
    assert negative_log_likelihood(p, x, y) == pytest.approx(expected, rel=1e-12)
    h = 1e-6
    fd = [(negative_log_likelihood(p, x, y + h * e) - negative_log_likelihood(p, x, y - h * e)) / (2 * h)
          for e in np.eye(3)]
    np.testing.assert_allclose(nll_grad_y(p, x, y), fd, rtol=1e-6)


def test_six_mode_geometry():
    p = six_mode_problem()
    np.testing.assert_allclose(np.linalg.norm(p.prior.means, axis=1), 2.0)
    angles = np.sort(np.mod(np.arctan2(p.prior.means[:, 1], p.prior.means[:, 0]), 2 * np.pi))
    np.testing.assert_allclose(np.diff(angles), np.pi / 3, atol=1e-12)
    np.testing.assert_allclose(p.prior.covs, np.broadcast_to(0.1 * np.eye(2), (6, 2, 2)))
    np.testing.assert_array_equal(p.forward, np.eye(2))


def test_problem_serialisation_round_trip():
    rng = np.random.default_rng(7)
    p = random_problem(rng, 2, 2, 2)
    q = LinearGaussianProblem.from_json(p.to_json())
    y = rng.normal(size=2)
    np.testing.assert_array_equal(posterior(p, y).means, posterior(q, y).means)
    assert q.noise_std == p.noise_std


def test_simulate_matches_model():
    p = two_mode_problem(0.3, 0.5)
    x, y = p.simulate(100_000, 0)
    resid = (y - x @ p.forward.T).ravel()
    assert resid.std() == pytest.approx(0.5, rel=0.01)
    assert abs(resid.mean()) < 0.01
