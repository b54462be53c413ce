"""Wasserstein-1 distances and the TV / KL diagnostics around them.

Equal-weight point clouds of equal size reduce optimal transport to a linear
assignment problem, solved exactly by :func:`robustcert._lap.solve_dense`.
Large clouds go through the batched estimator, which is biased upwards.
One-dimensional mixtures use quadrature of ``|F1 - F2|``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from . import _lap
from .mixtures import GaussianMixture, as_seed_sequence, gmm_density

DEFAULT_CAP = 4096


class TransportError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniformly weighted cloud of points, stored as an (N, dim) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("an empirical measure needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("empirical measure contains non-finite points")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def as_measure(a) -> EmpiricalMeasure:
    return a if isinstance(a, EmpiricalMeasure) else EmpiricalMeasure(a)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Optimal assignment ``i -> assignment[i]`` with Kantorovich potentials.

    ``phi[i] + psi[j] <= |x_i - y_j|`` for all pairs, with equality on the
    assignment, and ``cost == mean(phi) + mean(psi)`` up to rounding.
    """

    assignment: np.ndarray
    cost: float
    phi: np.ndarray
    psi: np.ndarray

    @property
    def dual_objective(self) -> float:
        return float(np.mean(self.phi) + np.mean(self.psi))

    def to_json(self) -> str:
        return json.dumps({
            "assignment": self.assignment.tolist(),
            "cost": self.cost,
            "potentials": {"phi": self.phi.tolist(), "psi": self.psi.tolist()},
        })


def assignment_cost_matrix(cost: np.ndarray):
    """Solve a square assignment problem. Returns ``(col_for_row, u, v)``."""
    cost = np.ascontiguousarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise TransportError("cost matrix must be square")
    col4row, u, v, ok = _lap.solve_dense(cost)
    if not ok:
        raise TransportError("assignment problem infeasible (non-finite costs?)")
    return col4row, u, v


def w1_empirical(a, b, cap: int = DEFAULT_CAP, subsample: bool = False, rng_seed=None):
    """Exact W1 between two equal-size uniform clouds (Euclidean ground cost).

    Returns ``(distance, TransportPlan)``. Clouds above ``cap`` points raise
    unless ``subsample`` is set, in which case ``cap`` points of each are used.
    """
    a, b = as_measure(a), as_measure(b)
    if a.dim != b.dim:
        raise TransportError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if len(a) != len(b):
        raise TransportError(f"exact mode needs equal sizes, got {len(a)} and {len(b)}")
    xa, xb = a.points, b.points
    if len(a) > cap:
        if not subsample:
            raise TransportError(f"{len(a)} points exceed the exact-solver cap of {cap}")
        rng = np.random.default_rng(rng_seed)
        xa = xa[rng.choice(len(a), cap, replace=False)]
        xb = xb[rng.choice(len(b), cap, replace=False)]
    c = _lap.euclidean_cost(np.ascontiguousarray(xa), np.ascontiguousarray(xb))
    col4row, u, v = assignment_cost_matrix(c)
    n = c.shape[0]
    total = float(np.mean(c[np.arange(n), col4row]))
    return total, TransportPlan(col4row, total, u, v)


def w1_sorted_1d(a, b) -> float:
    """W1 between equal-size 1D clouds through the monotone coupling."""
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.shape != b.shape:
        raise TransportError("sorted coupling needs equal sizes")
    return float(np.mean(np.abs(a - b)))


def w1_clouds(a, b, cap: int = DEFAULT_CAP) -> float:
    """Exact W1 of two equal-size clouds: sorted coupling in 1D, assignment otherwise."""
    a, b = as_measure(a), as_measure(b)
    if a.dim == 1 and b.dim == 1:
        return w1_sorted_1d(a.points, b.points)
    return w1_empirical(a, b, cap=cap)[0]


def _worker_count():
    try:
        return max(1, int(os.environ.get("TOOL_THREADS", "1")))
    except ValueError:
        return 1


def w1_empirical_large(a, b, batch: int, reps: int, rng_seed=None, cap: int = DEFAULT_CAP,
                       workers: int | None = None):
    """Mean of exact W1 over ``reps`` random subsample pairs of size ``batch``.

    Each repetition draws its own subsamples from a seed spawned off
    ``rng_seed``, so the result does not depend on ``workers``. The estimate is
    biased upwards (finite-sample W1 overshoots), less so for larger batches.
    Returns ``(estimate, std_error)``; the standard error is NaN for ``reps == 1``.
    """
    a, b = as_measure(a), as_measure(b)
    if batch > cap:
        raise TransportError(f"batch {batch} exceeds the exact-solver cap of {cap}")
    if batch > min(len(a), len(b)):
        raise TransportError("batch larger than one of the clouds")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    seeds = as_seed_sequence(rng_seed).spawn(reps)

    def one(seq):
        if batch == len(a) == len(b):
            xa, xb = a.points, b.points
            if reps > 1:
                rng = np.random.default_rng(seq)
                xa, xb = xa[rng.permutation(batch)], xb[rng.permutation(batch)]
        else:
            rng = np.random.default_rng(seq)
            xa = a.points[rng.choice(len(a), batch, replace=False)]
            xb = b.points[rng.choice(len(b), batch, replace=False)]
        return w1_empirical(xa, xb, cap=cap)[0]

    workers = workers or _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = np.array(list(pool.map(one, seeds)))
    else:
        vals = np.array([one(s) for s in seeds])
    se = float(vals.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
    return float(vals.mean()), se


# -- one-dimensional mixtures ---------------------------------------------------

def _check_1d(*gs):
    for g in gs:
        if g.dim != 1:
            raise TransportError(f"expected a 1D mixture, got dim {g.dim}")


def gmm_cdf_1d(g: GaussianMixture, x):
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(g.covs[:, 0, 0])
    z = (x[..., None] - g.means[:, 0]) / sd
    return ndtr(z) @ g.weights


def _support_1d(*gs, width=8.0):
    lo = min(float(np.min(g.means[:, 0] - width * np.sqrt(g.covs[:, 0, 0]))) for g in gs)
    hi = max(float(np.max(g.means[:, 0] + width * np.sqrt(g.covs[:, 0, 0]))) for g in gs)
    breaks = np.unique(np.concatenate([g.means[:, 0] for g in gs]))
    return lo, hi, breaks[(breaks > lo) & (breaks < hi)]


def _quad(fn, lo, hi, breaks, tol):
    # split at the component means so narrow modes are not stepped over
    edges = np.concatenate([[lo], breaks, [hi]])
    total = 0.0
    for s, e in zip(edges[:-1], edges[1:]):
        if e > s:
            val, _ = integrate.quad(fn, s, e, epsabs=tol / len(edges), epsrel=1e-12, limit=400)
            total += val
    return total


def w1_1d_gmm(g1: GaussianMixture, g2: GaussianMixture, tol: float = 1e-8) -> float:
    """Exact 1D W1 as the integral of ``|F1 - F2|`` over the 8-std window."""
    _check_1d(g1, g2)
    lo, hi, breaks = _support_1d(g1, g2)
    return _quad(lambda x: abs(gmm_cdf_1d(g1, x) - gmm_cdf_1d(g2, x)), lo, hi, breaks, tol)


def w1_gmm_vs_samples_1d(g: GaussianMixture, samples, grid_size: int = 4000) -> float:
    """W1 between a 1D mixture and an empirical cloud, ``int |F - F_N|``.

    The ECDF is piecewise constant between the sorted samples; on every piece
    ``|F - c|`` is integrated by Simpson's rule after inserting the crossing
    point. Extra grid nodes over the mixture window keep the pieces short.
    """
    _check_1d(g)
    s = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = s.size
    lo, hi, _ = _support_1d(g)
    lo, hi = min(lo, s[0]), max(hi, s[-1])
    grid = np.union1d(s, np.linspace(lo, hi, grid_size))
    left, right = grid[:-1], grid[1:]
    c = np.searchsorted(s, left, side="right") / n
    fl = gmm_cdf_1d(g, left) - c
    fr = gmm_cdf_1d(g, right) - c
    # F is increasing, so F - c changes sign at most once on each piece
    cross = (fl < 0) & (fr > 0)
    total = _simpson_abs(g, c, left, right, ~cross)
    if np.any(cross):
        xs = _bisect_crossing(g, c[cross], left[cross], right[cross])
        total += _simpson_abs(g, c[cross], left[cross], xs, None)
        total += _simpson_abs(g, c[cross], xs, right[cross], None)
    tail_lo = _tail_integral(g, lo, lower=True)
    tail_hi = _tail_integral(g, hi, lower=False)
    return float(total + tail_lo + tail_hi)


def _simpson_abs(g, c, a, b, mask):
    if mask is not None:
        c, a, b = c[mask], a[mask], b[mask]
    m = 0.5 * (a + b)
    fa = np.abs(gmm_cdf_1d(g, a) - c)
    fm = np.abs(gmm_cdf_1d(g, m) - c)
    fb = np.abs(gmm_cdf_1d(g, b) - c)
    return float(np.sum((b - a) * (fa + 4 * fm + fb) / 6))


def _bisect_crossing(g, c, a, b, iters=60):
    a, b = a.copy(), b.copy()
    for _ in range(iters):
        m = 0.5 * (a + b)
        below = gmm_cdf_1d(g, m) < c
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    return 0.5 * (a + b)


def _tail_integral(g, x, lower):
    """``int_{-inf}^x F`` (lower) or ``int_x^inf (1 - F)`` in closed form."""
    sd = np.sqrt(g.covs[:, 0, 0])
    mu = g.means[:, 0]
    z = (x - mu) / sd
    phi = np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    if lower:
        per = (x - mu) * ndtr(z) + sd * phi
    else:
        per = sd * phi - (x - mu) * ndtr(-z)
    return float(g.weights @ per)


def tv_distance_1d(g1: GaussianMixture, g2: GaussianMixture, tol: float = 1e-8) -> float:
    """Total variation ``0.5 int |p1 - p2|``."""
    _check_1d(g1, g2)
    lo, hi, breaks = _support_1d(g1, g2)
    val = 0.5 * _quad(lambda x: abs(gmm_density(g1, x) - gmm_density(g2, x)), lo, hi, breaks, tol)
    return float(min(max(val, 0.0), 1.0))


def kl_mc(p_sample, p_logpdf, q_logpdf, n: int, rng_seed=None):
    """Monte-Carlo ``KL(p || q) = E_p[log p - log q]``.

    ``p_sample(count, rng)`` draws from ``p``; the log densities take an
    (N, dim) array. Returns ``(estimate, std_error)``.
    """
    if n < 100:
        raise ValueError("kl_mc needs n >= 100")
    rng = np.random.default_rng(rng_seed)
    x = p_sample(n, rng)
    diff = np.asarray(p_logpdf(x), dtype=float) - np.asarray(q_logpdf(x), dtype=float)
    bad = np.flatnonzero(~np.isfinite(diff))
    if bad.size:
        raise FloatingPointError(
            f"non-finite log density at sample {bad[0]} (x = {np.asarray(x)[bad[0]]})"
        )
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n))


def kl_mc_gmm(p: GaussianMixture, q: GaussianMixture, n: int, rng_seed=None):
    from .mixtures import gmm_log_density, gmm_sample

    return kl_mc(
        lambda count, rng: gmm_sample(p, count, rng),
        lambda x: gmm_log_density(p, x),
        lambda x: gmm_log_density(q, x),
        n,
        rng_seed,
    )


def pinsker_chain_bound(kl: float, diameter: float) -> float:
    """Upper bound ``diameter * sqrt(KL / 2)`` on W1.

    Only valid when both measures live in a set of the given diameter; flow
    pushforwards have full support, so for them this is a heuristic.
    """
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    if not diameter > 0:
        raise ValueError("diameter must be positive")
    return float(diameter * np.sqrt(kl / 2.0))
