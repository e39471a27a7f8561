"""Machine unlearning for image-to-image autoencoders at desk scale.

Gradient-ascent decoupling followed by retention fine-tuning, the baselines it
is compared against, a '+'-trigger backdoor audit, probe-feature FD/IS proxies
and empirical checks of the ascent loss bounds on a convex problem.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import METHODS, Experiment
from .gradcore import ContractError, DimensionError, ModelParams, NonFiniteError, Tape, Tensor
from .unlearner import Certificate, UnlearnConfig, certify, unlearn_realistic

__all__ = [
    "Certificate",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Experiment",
    "ExperimentConfig",
    "METHODS",
    "ModelParams",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "UnlearnConfig",
    "certify",
    "load_config",
    "unlearn_realistic",
]
__version__ = "0.1.0"
