"""Pointwise robustness certificates for conditional generative models on linear-Gaussian inverse problems."""

from .certify import (
    CertifyConfig,
    OutOfDistributionError,
    PosteriorOracle,
    RobustnessCertificate,
    RobustnessInputs,
    certify_observation,
    estimate_epsilon,
    theorem_bound,
    unit_ball_volume,
)
from .flow import CondFlow, FlowArchitecture, TrainConfig, init_flow, train
from .mixtures import (
    GaussianMixture,
    LinearGaussianProblem,
    evidence_distribution,
    posterior,
    six_mode_problem,
    two_mode_problem,
)
from .transport import w1_1d_gmm, w1_empirical

__version__ = "0.1.0"
