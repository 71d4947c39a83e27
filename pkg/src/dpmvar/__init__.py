"""Multi-subject Bayesian vector autoregression with Dirichlet-process
mixture clustering of coefficients and residual covariances."""

__version__ = "0.1.0"

from .estimator import DPMixtureVAR
from .samplers import HyperParams, PosteriorDraws, run_chain
from .simgen import SimConfig, generate_replicate
from .var_core import LowRankCovariance, SubjectPanel

__all__ = [
    "DPMixtureVAR",
    "HyperParams",
    "LowRankCovariance",
    "PosteriorDraws",
    "SimConfig",
    "SubjectPanel",
    "__version__",
    "generate_replicate",
    "run_chain",
]
