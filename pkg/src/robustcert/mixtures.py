"""Gaussian mixtures and linear-Gaussian inverse problems.

Everything here is closed form: mixture densities and their gradients, the
evidence ``p_Y`` of ``Y = A X + noise`` and the mixture posterior of ``X``
given ``Y = y``. Covariance inverses go through a symmetric eigendecomposition
and anything with condition number above ``MAX_CONDITION`` is rejected.

JSON layout used by :meth:`GaussianMixture.to_dict` and
:meth:`LinearGaussianProblem.to_dict`::

    {"dim": 2,
     "weights": [0.5, 0.5],
     "means": [[-1.0, 0.0], [1.0, 0.0]],
     "covs": [[[0.1, 0.0], [0.0, 0.1]], [[0.1, 0.0], [0.0, 0.1]]]}

    {"forward": [[1.0, 0.0], [0.0, 1.0]],   # row-major, n x m
     "noise_std": 0.5,
     "prior": {...GaussianMixture...}}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MAX_CONDITION = 1e12
_LOG_2PI = np.log(2.0 * np.pi)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Accept None, an int, a sequence of ints or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class IllConditionedError(ValueError):
    """A covariance (or posterior precision) is too close to singular."""


def _sym_factor(cov):
    """Return (eigvals, eigvecs) of a symmetric positive-definite matrix."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 0 or vals[-1] / vals[0] > MAX_CONDITION:
        raise IllConditionedError(
            f"covariance not safely positive definite (eigenvalues {vals[0]:.3g}..{vals[-1]:.3g})"
        )
    return vals, vecs


def _sym_inv(cov):
    vals, vecs = _sym_factor(cov)
    return (vecs / vals) @ vecs.T


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted sum of Gaussians in ``dim`` dimensions.

    ``weights`` has shape (K,), ``means`` (K, dim) and ``covs`` (K, dim, dim).
    Weights are normalised on construction.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        cov = np.asarray(self.covs, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None, None]
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}"
            )
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValueError("means and covariances must be finite")
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        precs = np.empty_like(cov)
        logdets = np.empty(k)
        chols = np.empty_like(cov)
        for j in range(k):
            vals, vecs = _sym_factor(cov[j])
            precs[j] = (vecs / vals) @ vecs.T
            logdets[j] = np.sum(np.log(vals))
            chols[j] = vecs * np.sqrt(vals)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        object.__setattr__(self, "_precs", precs)
        object.__setattr__(self, "_logdets", logdets)
        object.__setattr__(self, "_roots", chols)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def component_log_densities(self, x):
        """log N(x; m_k, S_k) for every row of ``x`` and every component, shape (N, K)."""
        x = _as_points(x, self.dim)
        diff = x[:, None, :] - self.means[None, :, :]
        maha = np.einsum("nki,kij,nkj->nk", diff, self._precs, diff)
        return -0.5 * (maha + self._logdets[None, :] + self.dim * _LOG_2PI)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianMixture:
        g = cls(d["weights"], d["means"], d["covs"])
        if "dim" in d and int(d["dim"]) != g.dim:
            raise ValueError(f"declared dim {d['dim']} does not match means ({g.dim})")
        return g

    @classmethod
    def isotropic(cls, weights, means, variance) -> GaussianMixture:
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        k, d = means.shape
        covs = np.broadcast_to(np.eye(d) * variance, (k, d, d)).copy()
        return cls(weights, means, covs)


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == dim else x.reshape(-1, 1)
    if x.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {x.shape[-1]}")
    return x


def _squeeze_like(values, x, dim):
    x = np.asarray(x)
    single = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == dim and not (dim == 1 and x.shape[0] > 1))
    return values[0] if single else values


def gmm_log_density(g: GaussianMixture, x):
    """Log-sum-exp evaluation of the mixture log density (scalar or per row)."""
    logc = g.component_log_densities(x)
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    out = logsumexp(logc + logw[None, :], axis=1)
    return _squeeze_like(out, x, g.dim)


def gmm_density(g: GaussianMixture, x):
    return np.exp(gmm_log_density(g, x))


def gmm_grad_density(g: GaussianMixture, x):
    """Gradient of the mixture density, ``sum_k w_k N_k(x) * (-P_k (x - m_k))``."""
    pts = _as_points(x, g.dim)
    dens = g.weights[None, :] * np.exp(g.component_log_densities(pts))
    diff = pts[:, None, :] - g.means[None, :, :]
    pd = np.einsum("kij,nkj->nki", g._precs, diff)
    grad = -np.einsum("nk,nki->ni", dens, pd)
    return _squeeze_like(grad, x, g.dim)


def gmm_hessian_density(g: GaussianMixture, x):
    """Hessian of the mixture density at a single point."""
    pt = _as_points(x, g.dim)
    dens = g.weights * np.exp(g.component_log_densities(pt)[0])
    diff = pt[0][None, :] - g.means
    pd = np.einsum("kij,kj->ki", g._precs, diff)
    return np.einsum("k,kij->ij", dens, np.einsum("ki,kj->kij", pd, pd) - g._precs)


def gmm_sample(g: GaussianMixture, count: int, rng_seed=None) -> np.ndarray:
    """Ancestral sampling: a categorical draw for the component, then a Gaussian draw.

    ``rng_seed`` may be an int, a SeedSequence or a Generator.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    u = rng.random(count)
    normals = rng.standard_normal((count, g.dim))
    return gmm_transform(g, u, normals)


def gmm_transform(g: GaussianMixture, u, normals):
    """Map uniforms ``u`` (component choice) and standard normals to mixture draws.

    Sharing ``u`` and ``normals`` across different mixtures gives coupled samples.
    """
    cdf = np.cumsum(g.weights)
    cdf[-1] = 1.0
    comp = np.minimum(np.searchsorted(cdf, u, side="right"), g.n_components - 1)
    # zero-weight components are never chosen
    return g.means[comp] + np.einsum("nij,nj->ni", g._roots[comp], normals)


def gmm_mean(g: GaussianMixture) -> np.ndarray:
    return g.weights @ g.means


@dataclass(frozen=True, eq=False)
class LinearGaussianProblem:
    """``Y = A X + N(0, noise_std^2 I_n)`` with a Gaussian mixture prior on ``X``."""

    forward: np.ndarray
    noise_std: float
    prior: GaussianMixture

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.forward, dtype=float))
        if a.shape[1] != self.prior.dim:
            raise ValueError(
                f"forward has {a.shape[1]} columns but prior dim is {self.prior.dim}"
            )
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        object.__setattr__(self, "forward", a)
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def data_dim(self) -> int:
        return self.forward.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.forward.shape[0]

    def simulate(self, count: int, rng_seed=None):
        """Joint draws (x, y) with x from the prior."""
        rng = np.random.default_rng(rng_seed)
        x = gmm_sample(self.prior, count, rng)
        y = x @ self.forward.T + self.noise_std * rng.standard_normal((count, self.obs_dim))
        return x, y

    def to_dict(self) -> dict:
        return {
            "forward": self.forward.tolist(),
            "noise_std": self.noise_std,
            "prior": self.prior.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearGaussianProblem:
        return cls(d["forward"], d["noise_std"], GaussianMixture.from_dict(d["prior"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> LinearGaussianProblem:
        return cls.from_dict(json.loads(text))


def evidence_distribution(p: LinearGaussianProblem) -> GaussianMixture:
    """Law of Y: components ``(w_k, A m_k, A S_k A^T + sigma^2 I)``."""
    a = p.forward
    means = p.prior.means @ a.T
    covs = np.einsum("ij,kjl,ml->kim", a, p.prior.covs, a) + p.noise_std**2 * np.eye(p.obs_dim)
    return GaussianMixture(p.prior.weights, means, covs)


def posterior(p: LinearGaussianProblem, y) -> GaussianMixture:
    """Mixture posterior of X given Y = y.

    Per component the precision is ``A^T A / sigma^2 + S_k^{-1}`` and the mean
    solves ``prec m~ = A^T y / sigma^2 + S_k^{-1} m_k``. The weights are the
    prior weights times the component evidence ``N(y; A m_k, A S_k A^T + sigma^2 I)``,
    normalised in log space; this equals the product form with the ratio of
    determinant factors, which matters when the components differ in covariance.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != p.obs_dim:
        raise ValueError(f"observation has length {y.shape[0]}, expected {p.obs_dim}")
    a = p.forward
    s2 = p.noise_std**2
    prior = p.prior
    ata = a.T @ a / s2
    aty = a.T @ y / s2
    k = prior.n_components
    covs = np.empty_like(prior.covs)
    means = np.empty_like(prior.means)
    for j in range(k):
        covs[j] = _sym_inv(ata + prior._precs[j])
        means[j] = covs[j] @ (aty + prior._precs[j] @ prior.means[j])
    log_ev = evidence_distribution(p).component_log_densities(y[None, :])[0]
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights) + log_ev
    if not np.any(np.isfinite(logw)):
        raise FloatingPointError("all posterior log-weights are -inf")
    logw = logw - logw.max()
    return GaussianMixture(np.exp(logw), means, covs)


def negative_log_likelihood(p: LinearGaussianProblem, x, y) -> float:
    """``(n/2) log(2 pi sigma^2) + |y - A x|^2 / (2 sigma^2)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] != p.data_dim or y.shape[0] != p.obs_dim:
        raise ValueError("dimension mismatch between (x, y) and the problem")
    r = y - p.forward @ x
    s2 = p.noise_std**2
    return 0.5 * p.obs_dim * np.log(2 * np.pi * s2) + 0.5 * float(r @ r) / s2


def nll_grad_y(p: LinearGaussianProblem, x, y) -> np.ndarray:
    """Gradient of the negative log-likelihood in the observation: ``(y - A x) / sigma^2``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    return (y - p.forward @ x) / p.noise_std**2


# -- reference problems -------------------------------------------------------

def two_mode_prior(prior_std: float) -> GaussianMixture:
    """``0.5 N(-1, s^2) + 0.5 N(1, s^2)`` on the real line."""
    return GaussianMixture.isotropic([0.5, 0.5], [[-1.0], [1.0]], prior_std**2)


def two_mode_problem(prior_std: float, noise_std: float) -> LinearGaussianProblem:
    return LinearGaussianProblem([[1.0]], noise_std, two_mode_prior(prior_std))


def six_mode_prior(radius: float = 2.0, variance: float = 0.1) -> GaussianMixture:
    """Six equal-weight isotropic modes at angles ``2 pi j / 6`` on a circle.

    The mode geometry is a stand-in; results built on it are "six-mode-like".
    """
    angles = 2 * np.pi * np.arange(6) / 6
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture.isotropic(np.full(6, 1 / 6), means, variance)


def six_mode_problem(noise_std: float = 0.5, radius: float = 2.0, variance: float = 0.1):
    return LinearGaussianProblem(np.eye(2), noise_std, six_mode_prior(radius, variance))
