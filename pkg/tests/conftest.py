import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robustcert.certify import estimate_epsilon
from robustcert.flow import FlowArchitecture, TrainConfig, train
from robustcert.mixtures import two_mode_problem

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

TWO_MODE = dict(prior_std=0.3, noise_std=0.5)


class LinearToyGenerator:
    """``G(y, z) = M y + S z``; its y-Jacobian is ``M`` everywhere."""

    def __init__(self, M, S=None):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.data_dim, self.cond_dim = self.M.shape
        self.S = np.eye(self.data_dim) if S is None else np.atleast_2d(S)
        self.latent_dim = self.S.shape[1]

    def generate(self, y, z):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return y @ self.M.T + np.atleast_2d(z) @ self.S.T


@pytest.fixture(scope="session")
def two_mode():
    return two_mode_problem(**TWO_MODE)


@pytest.fixture(scope="session")
def trained_two_mode(two_mode):
    """A 1D two-mode flow trained for 5000 steps, with its averaged error estimate."""
    res = train(two_mode, FlowArchitecture(1, 1), TrainConfig(steps=5000, seed=0), evaluate=False)
    eps = estimate_epsilon(res.flow, two_mode, 30, 1000, seed=[0, 3])
    return res.flow, eps
