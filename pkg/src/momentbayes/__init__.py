"""Limited-information Bayesian inference for moment-inequality models.

The posterior of a partially identified parameter, set estimators for the
identified region, and maximum-posterior selection of moment subsets and
parameter subspaces.
"""

from .core import (
    DataError,
    Dataset,
    Hyperparameters,
    MomentModel,
    ThetaBox,
    ThetaPrior,
    load_dataset,
    make_interval_mean_model,
    make_interval_regression_model,
    make_mean_bounds_model,
    make_missing_data_model,
    save_dataset,
)
from .estimators import LevelSetEstimator, MomentSelector, PosteriorSampler, QuantileSetEstimator
from .likelihood import LogLikelihoodContext, LogPosterior, log_limited_likelihood, log_posterior_unnorm
from .mcmc import Chain, ProposalSpec, chain_quantile, metropolis
from .selection import Combination, enumerate_candidates, mpc_select
from .setestim import epsilon_schedule, hausdorff, level_set_region, quantile_set_estimate

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "Combination",
    "DataError",
    "Dataset",
    "Hyperparameters",
    "LevelSetEstimator",
    "LogLikelihoodContext",
    "LogPosterior",
    "MomentModel",
    "MomentSelector",
    "PosteriorSampler",
    "ProposalSpec",
    "QuantileSetEstimator",
    "ThetaBox",
    "ThetaPrior",
    "chain_quantile",
    "enumerate_candidates",
    "epsilon_schedule",
    "hausdorff",
    "level_set_region",
    "load_dataset",
    "log_limited_likelihood",
    "log_posterior_unnorm",
    "make_interval_mean_model",
    "make_interval_regression_model",
    "make_mean_bounds_model",
    "make_missing_data_model",
    "metropolis",
    "mpc_select",
    "quantile_set_estimate",
    "save_dataset",
]
