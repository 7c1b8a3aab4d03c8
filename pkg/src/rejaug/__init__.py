"""Bayesian inference for models whose likelihood is a rejection sampler.

The rejected proposals behind each observation are sampled alongside the
parameters, which turns a posterior with an intractable normalizer into one
with a tractable joint density.
"""
from .core import (AugmentedDataset, RejectionModel, gibbs_iteration, log_joint_augmented,
                   resample_rejected, run_gibbs, sample_with_rejections, theorem1_bound)
from .errors import ConfigError, DomainError, MaxAttemptsError, NumericalError
from .trace import ChainTrace

__version__ = "0.1.0"

__all__ = ["AugmentedDataset", "ChainTrace", "ConfigError", "DomainError", "MaxAttemptsError",
           "NumericalError", "RejectionModel", "gibbs_iteration", "log_joint_augmented",
           "resample_rejected", "run_gibbs", "sample_with_rejections", "theorem1_bound"]
