"""Pointwise robustness certificates for conditional generators.

For an observation ``y~`` with evidence ``a = p_Y(y~)``, a bound ``K`` on
``|grad p_Y|``, generator and posterior Lipschitz constants ``L_k`` and
``C_k`` at radius ``k = a / (2K) + |y~|``, and an averaged training error
``epsilon >= E_y W1(posterior(y), G(y, .)#P_Z)``, the distance
``W1(posterior(y~), G(y~, .)#P_Z)`` is bounded by (with ``rho = a / (2K)``
and ``S_n`` the unit-ball volume)::

    bound_13      = (L_k + C_k) eps^(1/(n+1)) rho + 2 eps^(1/(n+1)) / (S_n rho^n a)   if eps <= 1
    bound_14      = (L_k + C_k)^(n/(n+1)) (1 + 1/n) (2n / (S_n a))^(1/(n+1)) eps^(1/(n+1))
                    if eps <= rho^(n+1) (L_k + C_k) S_n a / (2n)
    bound_dimfree = (L_k + C_k) rho + 2 eps / (S_n rho^n a)

Every constant is estimated numerically here. The Lipschitz and gradient
estimates are maxima over finitely many probes, hence lower bounds on the
true suprema, and certificates label them as estimates.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, ndtr
from scipy.stats import spearmanr

from .flow import generator_y_jacobian, sample_pushforward, spectral_norm, truncated_latent_sample
from .mixtures import (
    GaussianMixture,
    LinearGaussianProblem,
    as_seed_sequence,
    evidence_distribution,
    gmm_density,
    gmm_grad_density,
    gmm_hessian_density,
    gmm_sample,
    gmm_transform,
    posterior,
)
from .transport import _worker_count, w1_1d_gmm, w1_clouds, w1_gmm_vs_samples_1d

OOD_FLOOR = 1e-300


class OutOfDistributionError(ValueError):
    """Evidence at the observation is below the floor; no certificate is issued."""


def unit_ball_volume(n: int) -> float:
    """Volume ``pi^(n/2) / Gamma(n/2 + 1)`` of the unit ball in R^n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(np.exp(_log_unit_ball_volume(n)))


def _log_unit_ball_volume(n):
    return 0.5 * n * np.log(np.pi) - gammaln(0.5 * n + 1)


# -- bounds --------------------------------------------------------------------------

@dataclass(frozen=True)
class RobustnessInputs:
    epsilon: float
    a: float
    K: float
    L_k: float
    C_k: float
    n: int
    y_tilde_norm: float

    def __post_init__(self):
        vals = (self.epsilon, self.a, self.K, self.L_k, self.C_k, self.y_tilde_norm)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("all robustness inputs must be finite")
        if self.epsilon < 0 or self.L_k < 0 or self.C_k < 0 or self.y_tilde_norm < 0:
            raise ValueError("epsilon, L_k, C_k and |y~| must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def k(self) -> float:
        return self.a / (2 * self.K) + self.y_tilde_norm


@dataclass
class RobustnessCertificate:
    inputs: RobustnessInputs
    bound_13: float | None
    bound_14: float | None
    bound_dimfree: float
    cond_eps_le_1: bool
    cond_eq14: bool
    eq14_threshold: float
    details: dict = field(default_factory=dict)

    @property
    def tightest_bound(self) -> float:
        return min(b for b in (self.bound_13, self.bound_14, self.bound_dimfree) if b is not None)

    def to_dict(self) -> dict:
        d = {
            "schema": "robustcert.certificate/1",
            "inputs": asdict(self.inputs),
            "k": self.inputs.k,
            "bound_13": self.bound_13,
            "bound_14": self.bound_14,
            "bound_dimfree": self.bound_dimfree,
            "cond_eps_le_1": self.cond_eps_le_1,
            "cond_eq14": self.cond_eq14,
            "eq14_threshold": self.eq14_threshold,
        }
        d.update(self.details)
        return _finite_or_none(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=_json_default, **kw)


def _finite_or_none(obj):
    """Replace NaN and infinities with None so the output is strict JSON."""
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def theorem_bound(i: RobustnessInputs) -> RobustnessCertificate:
    """Evaluate the three pointwise bounds and their validity gates.

    Products are formed in log space so large ``n`` or tiny ``a`` do not
    overflow intermediate powers.
    """
    if not (i.a > 0 and i.K > 0):
        raise ValueError("a and K must be positive")
    n = i.n
    lc = i.L_k + i.C_k
    log_s = _log_unit_ball_volume(n)
    log_rho = np.log(i.a) - np.log(2 * i.K)
    log_a = np.log(i.a)
    with np.errstate(divide="ignore"):
        log_eps = np.log(i.epsilon)
        log_lc = np.log(lc)
    root = 1.0 / (n + 1)

    def ex(*terms):
        s = sum(terms)
        if s == -np.inf:
            return 0.0
        return np.inf if s > 709.0 else float(np.exp(s))

    cond13 = i.epsilon <= 1.0
    bound_13 = None
    if cond13:
        bound_13 = ex(log_lc, root * log_eps, log_rho) + ex(
            np.log(2.0), root * log_eps, -log_s, -n * log_rho, -log_a)
    log_thr = (n + 1) * log_rho + log_lc + log_s + log_a - np.log(2 * n)
    threshold = ex(log_thr)
    cond14 = bool(i.epsilon <= threshold) if i.epsilon > 0 else True
    bound_14 = None
    if cond14:
        bound_14 = ex((1 - root) * log_lc, np.log1p(1.0 / n),
                      root * (np.log(2 * n) - log_s - log_a), root * log_eps)
    dimfree = ex(log_lc, log_rho) + ex(np.log(2.0), log_eps, -log_s, -n * log_rho, -log_a)
    return RobustnessCertificate(i, bound_13, bound_14, dimfree, bool(cond13), cond14, threshold)


def adversarial_bound(i: RobustnessInputs, C_attack: float, B: float) -> float:
    """``C_attack * B + bound_13`` with ``i`` evaluated at the attacked observation."""
    if B < 0:
        raise ValueError("B must be nonnegative")
    if i.epsilon > 1:
        raise ValueError("the attack bound needs epsilon <= 1")
    return float(C_attack * B + theorem_bound(i).bound_13)


# -- generators -----------------------------------------------------------------------

class PosteriorOracle:
    """Perfect generator: pushes ``N(0, I_{m+1})`` exactly onto the posterior.

    The first latent coordinate picks the mixture component through its
    normal CDF; the rest drive the Gaussian draw. Almost everywhere its
    y-Jacobian is the derivative of the selected component mean.
    """

    def __init__(self, problem: LinearGaussianProblem):
        self.problem = problem
        self.data_dim = problem.data_dim
        self.cond_dim = problem.obs_dim
        self.latent_dim = problem.data_dim + 1
        a = problem.forward
        s2 = problem.noise_std**2
        self._mean_jac = np.stack(
            [np.linalg.inv(a.T @ a / s2 + np.linalg.inv(c)) @ a.T / s2 for c in problem.prior.covs])

    def _one(self, y, z):
        post = posterior(self.problem, y)
        return gmm_transform(post, ndtr(z[:, 0]), z[:, 1:])

    def generate(self, y, z):
        y = np.asarray(y, dtype=float)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if y.ndim == 1:
            return self._one(y, z)
        out = np.empty((z.shape[0], self.data_dim))
        for i in range(z.shape[0]):
            out[i] = self._one(y[i], z[i:i + 1])[0]
        return out

    def y_jacobian(self, y, z):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        y = np.broadcast_to(y, (z.shape[0], y.shape[1]))
        out = np.empty((z.shape[0], self.data_dim, self.cond_dim))
        for i in range(z.shape[0]):
            w = posterior(self.problem, y[i]).weights
            cdf = np.cumsum(w)
            cdf[-1] = 1.0
            k = min(np.searchsorted(cdf, ndtr(z[i, 0]), side="right"), len(w) - 1)
            out[i] = self._mean_jac[k]
        return out


# -- constants ------------------------------------------------------------------------

def evidence_at(p: LinearGaussianProblem, y, floor: float = OOD_FLOOR):
    """``(p_Y(y), valid)``; ``valid`` is False when the density is at or below ``floor``."""
    a = float(gmm_density(evidence_distribution(p), np.asarray(y, dtype=float).reshape(-1)))
    return a, bool(a > floor)


def _default_search_radius(g: GaussianMixture) -> float:
    return float(np.max(np.linalg.norm(g.means, axis=1))
                 + 4 * np.sqrt(np.max(np.linalg.eigvalsh(g.covs))))


def evidence_grad_bound(p: LinearGaussianProblem, search_radius: float | None = None,
                        starts: int = 20, seed=None) -> float:
    """Largest ``|grad p_Y|`` found by multi-start local maximisation.

    Starts at every component mean, one standard deviation along each
    principal axis on both sides of it, and ``starts`` uniform points in the
    ball of ``search_radius``. The result is a lower bound on the supremum.
    """
    g = evidence_distribution(p)
    if search_radius is None:
        search_radius = _default_search_radius(g)
    if not search_radius > 0:
        raise ValueError("search_radius must be positive")
    n = g.dim
    anchors = []
    for mean, cov in zip(g.means, g.covs):
        vals, vecs = np.linalg.eigh(cov)
        anchors.append(mean)
        for lam, vec in zip(vals, vecs.T):
            anchors += [mean + np.sqrt(lam) * vec, mean - np.sqrt(lam) * vec]
    rng = np.random.default_rng(seed)
    anchors += list(_uniform_ball(rng, starts, n, search_radius))
    scale = float(np.max(np.linalg.norm(gmm_grad_density(g, np.array(anchors)), axis=1))) or 1.0

    def neg(y):
        gr = gmm_grad_density(g, y)
        return -0.5 * float(gr @ gr) / scale**2, -(gmm_hessian_density(g, y) @ gr) / scale**2

    best = 0.0
    for y0 in anchors:
        best = max(best, float(np.linalg.norm(gmm_grad_density(g, y0))))
        res = minimize(neg, y0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 500})
        best = max(best, float(np.linalg.norm(gmm_grad_density(g, res.x))))
    return best


def _uniform_ball(rng, count, n, radius):
    # one row of normals per point (direction plus a radius uniform), so a
    # longer draw extends a shorter one with the same seed
    g = rng.standard_normal((count, n + 1))
    d = g[:, :n] / np.linalg.norm(g[:, :n], axis=1, keepdims=True)
    return d * radius * ndtr(g[:, n])[:, None] ** (1.0 / n)


def estimate_generator_lipschitz(gen, radius_k: float, probes: int = 256, seed=None,
                                 h: float = 1e-4) -> float:
    """Max spectral norm of ``d/dy G(y, z)`` over random probes.

    ``y`` is uniform in the ball of ``radius_k`` and ``z`` standard normal
    restricted to ``|z| <= 5 sqrt(d)``. Separate streams for ``y`` and ``z``
    make the first ``P`` probes identical for any larger probe count, so the
    estimate is a running maximum.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    sy, sz = as_seed_sequence(seed).spawn(2)
    ys = _uniform_ball(np.random.default_rng(sy), probes, gen.cond_dim, radius_k)
    zs = truncated_latent_sample(5 * np.sqrt(gen.latent_dim), gen.latent_dim, probes, sz)
    if hasattr(gen, "y_jacobian"):
        jac = gen.y_jacobian(ys, zs)
    else:
        jac = generator_y_jacobian(gen, ys, zs, h=h)
    return float(np.max(spectral_norm(jac)))


def _coupled_posterior_samples(p, y, u, normals):
    return gmm_transform(posterior(p, y), u, normals)


def posterior_w1(p: LinearGaussianProblem, y1, y2, samples: int = 1024, seed=None) -> float:
    """W1 between two posteriors: quadrature in 1D, coupled clouds otherwise.

    In several dimensions both clouds share their uniforms and normals, so
    the estimate vanishes as ``y2 -> y1`` instead of stalling at the
    independent-sample noise floor.
    """
    if p.data_dim == 1:
        return w1_1d_gmm(posterior(p, y1), posterior(p, y2))
    rng = np.random.default_rng(seed)
    u = rng.random(samples)
    normals = rng.standard_normal((samples, p.data_dim))
    return w1_clouds(_coupled_posterior_samples(p, y1, u, normals),
                     _coupled_posterior_samples(p, y2, u, normals))


def estimate_posterior_lipschitz(p: LinearGaussianProblem, radius_r: float, pairs: int = 40,
                                 seed=None, samples: int = 1024) -> float:
    """Max of ``W1(post(y1), post(y2)) / |y1 - y2|`` over sampled pairs in the ball.

    Pairs cycle through separations 1e-3, 1e-2, 1e-1 and an independent
    second point, so both local slopes and chords are probed.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    n = p.obs_dim
    sy, so, sd, sw = as_seed_sequence(seed).spawn(4)
    rd = np.random.default_rng(sd)
    y1s = _uniform_ball(np.random.default_rng(sy), pairs, n, radius_r)
    others = _uniform_ball(np.random.default_rng(so), pairs, n, radius_r)
    dirs = rd.standard_normal((pairs, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    seps = (1e-3, 1e-2, 1e-1, None)
    best = 0.0
    for i in range(pairs):
        sep = seps[i % 4]
        y1 = y1s[i]
        if sep is None:
            y2 = others[i]
        else:
            y2 = y1 + sep * dirs[i]
            if np.linalg.norm(y2) > radius_r:
                y2 = y1 - sep * dirs[i]
        dist = float(np.linalg.norm(y1 - y2))
        if dist == 0:
            continue
        best = max(best, posterior_w1(p, y1, y2, samples, sw) / dist)
    return best


def likelihood_modulus(p: LinearGaussianProblem, r: float, x) -> float:
    """``(r + |A x|) / sigma^2``: sup of ``|grad_y log p(y | x)|`` over ``|y| <= r``."""
    if not r > 0:
        raise ValueError("r must be positive")
    ax = p.forward @ np.asarray(x, dtype=float).reshape(-1)
    return float((r + np.linalg.norm(ax)) / p.noise_std**2)


# -- Monte-Carlo distances ---------------------------------------------------------------

def measure_w1(gen, p: LinearGaussianProblem, y, samples: int, seed=None) -> float:
    """One estimate of ``W1(posterior(y), G(y, .)#P_Z)``.

    1D data compares the exact posterior CDF with the empirical pushforward;
    otherwise posterior samples and generator samples go through the exact
    assignment solver.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    sg, sp = as_seed_sequence(seed).spawn(2)
    xs = sample_pushforward(gen, y, samples, sg)
    post = posterior(p, y)
    if p.data_dim == 1:
        return w1_gmm_vs_samples_1d(post, xs[:, 0])
    return w1_clouds(gmm_sample(post, samples, np.random.default_rng(sp)), xs)


def measure_w1_reps(gen, p, y, samples: int, reps: int, seed=None):
    """Mean and standard error of :func:`measure_w1` over ``reps`` seeds."""
    vals = np.array([measure_w1(gen, p, y, samples, s)
                     for s in as_seed_sequence(seed).spawn(reps)])
    se = float(vals.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return float(vals.mean()), se


def estimate_epsilon(gen, p: LinearGaussianProblem, num_obs: int = 30, samples_per_obs: int = 1000,
                     seed=None, workers: int | None = None):
    """Monte-Carlo ``E_{y ~ P_Y} W1(posterior(y), G(y, .)#P_Z)``; returns ``(mean, stderr)``.

    Observations and per-observation seeds are spawned from ``seed``; the
    result is the same for any number of ``workers``.
    """
    if num_obs < 1:
        raise ValueError("num_obs must be >= 1")
    s_obs, s_each = as_seed_sequence(seed).spawn(2)
    ys = gmm_sample(evidence_distribution(p), num_obs, np.random.default_rng(s_obs))
    seeds = s_each.spawn(num_obs)

    def one(j):
        return measure_w1(gen, p, ys[j], samples_per_obs, seeds[j])

    workers = workers or _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = np.array(list(pool.map(one, range(num_obs))))
    else:
        vals = np.array([one(j) for j in range(num_obs)])
    se = float(vals.std(ddof=1) / np.sqrt(num_obs)) if num_obs > 1 else float("nan")
    return float(vals.mean()), se


# -- pipeline ------------------------------------------------------------------------

@dataclass(frozen=True)
class CertifyConfig:
    seed: int = 0
    grad_starts: int = 20
    grad_search_radius: float | None = None
    lipschitz_probes: int = 256
    posterior_pairs: int = 40
    posterior_samples: int = 1024
    eps_num_obs: int = 30
    eps_samples: int = 1000
    w1_samples: int = 2000
    w1_reps: int = 5
    ood_floor: float = OOD_FLOOR
    epsilon: float | None = None


def _seeds(cfg, tag):
    return as_seed_sequence([cfg.seed, tag])


def _point_seed(cfg, j):
    # scan point 0 is y~ itself and shares the seed of the certified measurement
    return as_seed_sequence([cfg.seed, 7, j])


def estimate_constants(gen, p: LinearGaussianProblem, y, cfg: CertifyConfig, y_norm: float | None = None):
    """Estimate ``(a, K, L_k, C_k, epsilon)`` at ``y`` with ``k = a/(2K) + y_norm``.

    ``y_norm`` defaults to ``|y|``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    a, valid = evidence_at(p, y, cfg.ood_floor)
    if not valid:
        raise OutOfDistributionError(
            f"evidence p_Y(y) = {a:.3g} is below the floor {cfg.ood_floor:.3g}: this is an "
            "out-of-distribution observation, for which no good pointwise estimate can be "
            "expected and the bound degenerates; refusing to certify")
    K = evidence_grad_bound(p, cfg.grad_search_radius, cfg.grad_starts, _seeds(cfg, 1))
    if y_norm is None:
        y_norm = float(np.linalg.norm(y))
    k = a / (2 * K) + y_norm
    L = estimate_generator_lipschitz(gen, k, cfg.lipschitz_probes, _seeds(cfg, 2))
    C = estimate_posterior_lipschitz(p, k, cfg.posterior_pairs, _seeds(cfg, 3), cfg.posterior_samples)
    if cfg.epsilon is not None:
        eps, eps_se = float(cfg.epsilon), float("nan")
    else:
        eps, eps_se = estimate_epsilon(gen, p, cfg.eps_num_obs, cfg.eps_samples, _seeds(cfg, 4))
    inputs = RobustnessInputs(eps, a, K, L, C, p.obs_dim, y_norm)
    meta = {
        "estimated_constants": ["a", "K", "L_k", "C_k", "epsilon"],
        "epsilon_stderr": eps_se,
        "probe_counts": {
            "grad_starts": cfg.grad_starts,
            "lipschitz_probes": cfg.lipschitz_probes,
            "posterior_pairs": cfg.posterior_pairs,
            "eps_num_obs": cfg.eps_num_obs,
            "eps_samples": cfg.eps_samples,
        },
        "seed": cfg.seed,
    }
    return inputs, meta


def certify_observation(gen, p: LinearGaussianProblem, y_tilde, cfg: CertifyConfig = CertifyConfig()):
    """Estimate every constant at ``y_tilde``, evaluate the bounds, and measure the real W1.

    Returns ``(certificate, (w1, stderr))``. ``details["bound_satisfied"]``
    compares the measurement against the tightest valid bound with three
    standard errors of slack. Raises :class:`OutOfDistributionError` when the
    evidence is below ``cfg.ood_floor``.
    """
    y = np.asarray(y_tilde, dtype=float).reshape(-1)
    inputs, meta = estimate_constants(gen, p, y, cfg)
    cert = theorem_bound(inputs)
    w1, se = measure_w1_reps(gen, p, y, cfg.w1_samples, cfg.w1_reps, _point_seed(cfg, 0))
    slack = 3 * se if np.isfinite(se) else 0.0
    meta.update({
        "y_tilde": y.tolist(),
        "measured_w1": w1,
        "measured_w1_stderr": se,
        "bound_satisfied": bool(w1 <= cert.tightest_bound + slack),
        "bound_13_satisfied": None if cert.bound_13 is None else bool(w1 <= cert.bound_13 + slack),
    })
    cert.details = meta
    return cert, (w1, se)


@dataclass
class ScanResult:
    points: np.ndarray
    w1: np.ndarray
    w1_stderr: np.ndarray
    y_hat: np.ndarray
    min_w1: float
    min_w1_stderr: float
    a_hat: float
    radius: float
    epsilon: float
    bound: float
    satisfied: bool

    def to_csv(self) -> str:
        n = self.points.shape[1]
        head = ",".join(f"y{j}" for j in range(n)) + ",w1,w1_stderr"
        lines = [head]
        for pt, w, s in zip(self.points, self.w1, self.w1_stderr):
            lines.append(",".join(repr(float(v)) for v in pt) + f",{float(w)!r},{float(s)!r}")
        return "\n".join(lines) + "\n"


def proof_geometry_scan(gen, p: LinearGaussianProblem, y_tilde, radius_r: float, grid_points: int,
                        cfg: CertifyConfig = CertifyConfig()) -> ScanResult:
    """Scan ``W1(posterior(y), G(y, .)#P_Z)`` over the ball ``B_r(y~)``.

    Some point of the ball must sit below ``2 eps / (S_n r^n a_hat)`` where
    ``a_hat`` is the smallest evidence seen on the ball; ``satisfied`` checks
    the scan minimum against that level with three standard errors of slack.
    The first scan point is ``y~`` itself; 1D balls use an even grid.
    """
    if not radius_r > 0:
        raise ValueError("radius_r must be positive")
    y0 = np.asarray(y_tilde, dtype=float).reshape(-1)
    n = y0.size
    if grid_points == 1:
        pts = y0[None, :]
    elif n == 1:
        offs = np.linspace(-radius_r, radius_r, grid_points)
        offs = offs[np.argsort(np.abs(offs), kind="stable")]
        pts = y0 + offs[:, None]
    else:
        rng = np.random.default_rng(_seeds(cfg, 6))
        pts = np.vstack([y0, y0 + _uniform_ball(rng, grid_points - 1, n, radius_r)])
    w, s = [], []
    for j, pt in enumerate(pts):
        m, e = measure_w1_reps(gen, p, pt, cfg.w1_samples, cfg.w1_reps, _point_seed(cfg, j))
        w.append(m)
        s.append(e)
    w, s = np.array(w), np.array(s)
    ev = evidence_distribution(p)
    a_hat = float(np.min(gmm_density(ev, pts)))
    if cfg.epsilon is not None:
        eps = float(cfg.epsilon)
    else:
        eps = estimate_epsilon(gen, p, cfg.eps_num_obs, cfg.eps_samples, _seeds(cfg, 4))[0]
    bound = float(2 * eps / (unit_ball_volume(n) * radius_r**n * a_hat))
    i = int(np.argmin(w))
    slack = 3 * s[i] if np.isfinite(s[i]) else 0.0
    return ScanResult(pts, w, s, pts[i], float(w[i]), float(s[i]), a_hat, float(radius_r), eps,
                      bound, bool(w[i] <= bound + slack))


def convergence_sweep(checkpoints, p: LinearGaussianProblem, y_list, cfg: CertifyConfig = CertifyConfig()):
    """Per generator: ``epsilon_hat`` and the pointwise W1 at every ``y`` in ``y_list``.

    All generators are evaluated with the same seeds. Rows come back sorted by
    ``epsilon_hat``; each row keeps the generator's position in the input.
    """
    if len(checkpoints) < 2:
        raise ValueError("need at least two checkpoints")
    rows = []
    for idx, gen in enumerate(checkpoints):
        eps, se = estimate_epsilon(gen, p, cfg.eps_num_obs, cfg.eps_samples, _seeds(cfg, 4))
        pw = [measure_w1(gen, p, y, cfg.w1_samples, [cfg.seed, 8, j]) for j, y in enumerate(y_list)]
        rows.append({
            "index": idx,
            "step": getattr(gen, "step", None),
            "epsilon_hat": eps,
            "epsilon_hat_stderr": se,
            "pointwise_w1": pw,
            "mean_pointwise_w1": float(np.mean(pw)),
        })
    rows.sort(key=lambda r: (r["epsilon_hat"], r["index"]))
    return rows


def sweep_spearman(rows) -> float:
    return float(spearmanr([r["epsilon_hat"] for r in rows],
                           [r["mean_pointwise_w1"] for r in rows]).statistic)


def sweep_to_csv(rows) -> str:
    k = len(rows[0]["pointwise_w1"])
    head = "index,step,epsilon_hat,epsilon_hat_stderr,mean_pointwise_w1," + ",".join(
        f"w1_y{j}" for j in range(k))
    lines = [head]
    for r in rows:
        lines.append(",".join(str(v) for v in [
            r["index"], r["step"], repr(r["epsilon_hat"]), repr(r["epsilon_hat_stderr"]),
            repr(r["mean_pointwise_w1"])] + [repr(v) for v in r["pointwise_w1"]]))
    return "\n".join(lines) + "\n"


# -- adversarial attacks -------------------------------------------------------------------

@dataclass
class AttackResult:
    delta: np.ndarray
    attained_w1: float
    attained_stderr: float
    w1_at_zero: float
    evaluations: int


def attack_search(gen, p: LinearGaussianProblem, y_tilde, B: float, budget: int = 40, seed=None,
                  samples: int = 2000, reps: int = 3) -> AttackResult:
    """Derivative-free search for ``argmax_{|delta| <= B} W1(posterior(y~), G(y~ + delta, .)#P_Z)``.

    The objective reuses one set of seeds for every ``delta`` so it is a
    deterministic function of ``delta``. ``delta = 0`` is always evaluated
    first; half of the remaining budget goes to random points (sphere and
    ball), the rest to coordinate moves with a shrinking step.
    """
    if B < 0:
        raise ValueError("B must be nonnegative")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    y0 = np.asarray(y_tilde, dtype=float).reshape(-1)
    n = y0.size
    post = posterior(p, y0)
    seeds = as_seed_sequence(seed).spawn(reps + 1)
    stream = np.random.default_rng(seeds[-1])

    def objective(delta):
        vals = []
        for s in seeds[:reps]:
            xs = sample_pushforward(gen, y0 + delta, samples, s)
            if p.data_dim == 1:
                vals.append(w1_gmm_vs_samples_1d(post, xs[:, 0]))
            else:
                ref = gmm_sample(post, samples, np.random.default_rng(s.spawn(1)[0]))
                vals.append(w1_clouds(ref, xs))
        vals = np.array(vals)
        se = float(vals.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
        return float(vals.mean()), se

    best_d = np.zeros(n)
    best_v, best_se = objective(best_d)
    zero_v = best_v
    used = 1
    if B == 0:
        return AttackResult(best_d, best_v, best_se, zero_v, used)

    n_random = (budget - 1) // 2
    for i in range(n_random):
        d = stream.standard_normal(n)
        d *= B / np.linalg.norm(d)
        if i % 2:
            d *= stream.random() ** (1.0 / n)
        v, se = objective(d)
        used += 1
        if v > best_v:
            best_d, best_v, best_se = d, v, se
    step = B / 2
    while used < budget:
        improved = False
        for j in range(n):
            for sign in (1.0, -1.0):
                if used >= budget:
                    break
                d = best_d.copy()
                d[j] += sign * step
                norm = np.linalg.norm(d)
                if norm > B:
                    d *= B / norm
                v, se = objective(d)
                used += 1
                if v > best_v:
                    best_d, best_v, best_se, improved = d, v, se, True
        if not improved:
            step /= 2
    return AttackResult(best_d, best_v, best_se, zero_v, used)


def attack_report(gen, p: LinearGaussianProblem, y_tilde, B: float, cfg: CertifyConfig = CertifyConfig(),
                  budget: int = 40) -> dict:
    """Run :func:`attack_search` and compare the result against :func:`adversarial_bound`.

    Constants are estimated at ``y~ + delta*`` with radius
    ``k = a / (2K) + |y~| + B``; the posterior-shift constant is estimated on
    the ball of radius ``|y~| + B``.
    """
    y0 = np.asarray(y_tilde, dtype=float).reshape(-1)
    res = attack_search(gen, p, y0, B, budget, _seeds(cfg, 9), cfg.w1_samples, max(cfg.w1_reps, 2))
    y_att = y0 + res.delta
    radius_attack = float(np.linalg.norm(y0)) + B
    inputs, meta = estimate_constants(gen, p, y_att, cfg, y_norm=radius_attack)
    C_attack = estimate_posterior_lipschitz(p, max(radius_attack, 1e-12), cfg.posterior_pairs,
                                            _seeds(cfg, 10), cfg.posterior_samples)
    bound = adversarial_bound(inputs, C_attack, B) if inputs.epsilon <= 1 else None
    return _finite_or_none({
        "schema": "robustcert.attack/1",
        "y_tilde": y0.tolist(),
        "B": float(B),
        "delta": res.delta.tolist(),
        "attained_w1": res.attained_w1,
        "attained_w1_stderr": res.attained_stderr,
        "w1_at_zero": res.w1_at_zero,
        "evaluations": res.evaluations,
        "inputs": asdict(inputs),
        "k": inputs.k,
        "C_attack": C_attack,
        "bound": bound,
        "margin": None if bound is None else bound - res.attained_w1,
        "bound_satisfied": None if bound is None else bool(res.attained_w1 <= bound),
        "epsilon_stderr": meta["epsilon_stderr"],
        "seed": cfg.seed,
    })
