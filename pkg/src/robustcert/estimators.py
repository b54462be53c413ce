"""MAP and MMSE estimators for the symmetric two-mode toy problem.

Prior ``0.5 N(-1, s^2) + 0.5 N(1, s^2)``, observation ``Y = X + N(0, sigma^2)``.
``prior_std`` is the prior mode width ``s``; it is unrelated to the training
accuracy ``epsilon`` used in :mod:`robustcert.certify`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mixtures import GaussianMixture, gmm_mean, posterior, two_mode_problem

_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class TwoModeConfig:
    prior_std: float
    noise_std: float

    def __post_init__(self):
        if not (self.prior_std > 0 and self.noise_std > 0):
            raise ValueError("prior_std and noise_std must be positive")

    @classmethod
    def from_variances(cls, prior_var: float, noise_var: float) -> TwoModeConfig:
        return cls(float(np.sqrt(prior_var)), float(np.sqrt(noise_var)))

    def problem(self):
        return two_mode_problem(self.prior_std, self.noise_std)


def log_cosh(u):
    """Overflow-free ``log cosh(u)``."""
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - _LOG2


def map_objective(c: TwoModeConfig, y: float, x):
    """Negative log posterior up to a constant."""
    e2 = c.prior_std**2
    s2 = c.noise_std**2
    x = np.asarray(x, dtype=float)
    return (y - x) ** 2 / (2 * s2) + (x**2 + 1) / (2 * e2) - log_cosh(x / e2)


def _map_derivatives(c, y, x):
    e2 = c.prior_std**2
    s2 = c.noise_std**2
    th = np.tanh(x / e2)
    d1 = (x - y) / s2 + x / e2 - th / e2
    d2 = 1 / s2 + 1 / e2 - (1 - th**2) / e2**2
    return d1, d2


def map_estimate(c: TwoModeConfig, y: float, grid_points: int = 2001, refine_iters: int = 60) -> float:
    """Global minimiser of :func:`map_objective`.

    A coarse grid over the span of the prior means +/- 4 (prior + noise) std
    picks the three best starting points; each is refined with safeguarded
    Newton steps and the lowest objective wins. At ``y == 0`` the two minimisers
    are mirror images and the nonnegative one is returned.
    """
    y = float(y)
    if y < 0:
        return -map_estimate(c, -y, grid_points, refine_iters)
    spread = 4 * (c.prior_std + c.noise_std)
    lo, hi = min(-1.0, y) - spread, max(1.0, y) + spread
    grid = np.linspace(lo, hi, grid_points)
    vals = map_objective(c, y, grid)
    h = grid[1] - grid[0]
    best_x, best_f = None, np.inf
    for i in np.argsort(vals)[:3]:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
        x = grid[i]
        for _ in range(refine_iters):
            d1, d2 = _map_derivatives(c, y, x)
            if d1 > 0:
                b = min(b, x)
            elif d1 < 0:
                a = max(a, x)
            step = d1 / d2 if d2 > 0 else np.sign(d1) * h
            x_new = x - step
            if not (a <= x_new <= b):
                x_new = 0.5 * (a + b)
            if abs(x_new - x) < 1e-15:
                break
            x = x_new
        f = float(map_objective(c, y, x))
        if f < best_f or (f == best_f and x > best_x):
            best_x, best_f = float(x), f
    return abs(best_x) if y == 0 else best_x


def _posterior_terms(c: TwoModeConfig, y):
    """Log weights and means of the two posterior components (unnormalised)."""
    e2 = c.prior_std**2
    s2 = c.noise_std**2
    y = np.asarray(y, dtype=float)
    m1 = (e2 * y + s2) / (e2 + s2)
    m2 = (e2 * y - s2) / (e2 + s2)
    lw1 = ((e2 * y + s2) ** 2 / (s2 * (e2 + s2)) - 1) / (2 * e2)
    lw2 = ((e2 * y - s2) ** 2 / (s2 * (e2 + s2)) - 1) / (2 * e2)
    return lw1, lw2, m1, m2


def mmse_closed_form(c: TwoModeConfig, y):
    """Posterior mean of the two-mode problem.

    Equal to ``(w1 m1 + w2 m2) / (w1 + w2)``; with ``lw1 - lw2 = 2y / (s^2 + sigma^2)``
    this is ``(e2 y + sigma^2 tanh(y / (s^2 + sigma^2))) / (s^2 + sigma^2)``,
    which stays finite for every ``y``.
    """
    e2 = c.prior_std**2
    s2 = c.noise_std**2
    lw1, lw2, m1, m2 = _posterior_terms(c, y)
    # normalised weights via the log-weight difference
    w1 = 0.5 * (1 + np.tanh(0.5 * (lw1 - lw2)))
    out = w1 * m1 + (1 - w1) * m2
    return float(out) if np.ndim(out) == 0 else out


def mmse_posterior_mean(post: GaussianMixture) -> np.ndarray:
    return gmm_mean(post)


def estimator_sweep(c: TwoModeConfig, y_grid) -> list[tuple[float, float, float]]:
    """Rows ``(y, map, mmse)`` for each ``y`` in the grid."""
    y_grid = [float(v) for v in y_grid]
    if not y_grid:
        raise ValueError("empty y grid")
    return [(y, map_estimate(c, y), float(mmse_closed_form(c, y))) for y in y_grid]


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "map", "mmse"])
    for y, xm, xe in rows:
        w.writerow([repr(y), repr(xm), repr(xe)])
    return buf.getvalue()


def mmse_via_posterior(c: TwoModeConfig, y: float) -> float:
    """MMSE through the generic mixture posterior, for cross-checking."""
    return float(mmse_posterior_mean(posterior(c.problem(), [y]))[0])
