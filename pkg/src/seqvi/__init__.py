"""Sequential variational inference for continual learning.

Parameter-space (VCL) and function-space (SFSVI) variational continual
learning with Gaussian and Gaussian-mixture variational families, plus
the usual MAP-based baselines, on small fully connected networks.
"""

import jax

# KL terms over log-variances lose too much precision in float32.
jax.config.update("jax_enable_x64", True)

from seqvi.distributions import DiagGaussian, GaussMixture  # noqa: E402
from seqvi.estimator import ContinualClassifier  # noqa: E402
from seqvi.nn import FcnnSpec  # noqa: E402

__all__ = ["ContinualClassifier", "DiagGaussian", "FcnnSpec", "GaussMixture"]
__version__ = "0.1.0"
