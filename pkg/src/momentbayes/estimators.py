"""Estimator-style wrappers with ``fit`` / ``predict`` and ``get_params``.

``X`` is the observed data (a :class:`~momentbayes.core.Dataset`, a data
frame, or an array with ``columns``).  ``predict`` takes parameter values,
not data rows, and reports membership in the estimated set.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    check_box,
    check_dataset,
    check_hyper,
    check_is_fitted,
    check_model,
    check_prior,
    check_theta,
)
from .likelihood import LogLikelihoodContext, LogPosterior
from .mcmc import ProposalSpec, metropolis, tune_proposal
from .selection import enumerate_candidates, mpc_select
from .setestim import epsilon_schedule, level_set_region, map_maximize, quantile_set_estimate

__all__ = ["PosteriorSampler", "QuantileSetEstimator", "LevelSetEstimator", "MomentSelector"]


def _pi(value, n: int) -> float:
    if isinstance(value, str):
        from .experiments import pi_schedule

        return pi_schedule(n, value)
    return float(value)


def _eps(value, n: int) -> float:
    return epsilon_schedule(n, value) if isinstance(value, str) else float(value)


class _PosteriorBase(BaseEstimator):
    def _setup(self, X):
        model = check_model(self.model)
        data = check_dataset(X, self.columns)
        box = check_box(self.box, model.d)
        prior = check_prior(self.prior, self.prior_mean, self.prior_sd, box)
        hyper = check_hyper(self.psi, self.V, model.p)
        ctx = LogLikelihoodContext(model, data, hyper)
        self.model_ = model
        self.n_ = data.n
        self.posterior_ = LogPosterior(ctx, prior)
        return self.posterior_

    def score_samples(self, theta) -> np.ndarray:
        """Unnormalised log posterior at each row of ``theta``."""
        check_is_fitted(self, "posterior_")
        return np.asarray(self.posterior_(check_theta(theta, self.model_.d)), dtype=float)


class PosteriorSampler(_PosteriorBase):
    """Random-walk Metropolis draws from the limited-information posterior.

    Parameters
    ----------
    model : MomentModel or str
        Moment model, or ``"interval-mean"`` / ``"missing-data"``.
    psi : float or array-like
        Exponential-prior rates, one per moment.
    V : array-like, optional
        Scale matrix; identity by default.
    box : tuple
        ``(lower, upper)`` bounds of the parameter space.
    prior : {"flat", "normal"}
    prior_mean, prior_sd : array-like, optional
        Normal prior location and standard deviations.
    B : int
        Retained draws.
    burn_in : int, optional
        Discarded initial iterations (``B // 10`` by default).
    proposal_sd : float or array-like, optional
        Random-walk standard deviations; a tenth of the box width by default.
    init : array-like, optional
        Starting value; the posterior mode by default.
    tune : int
        Pilot rounds used to learn a proposal covariance.
    seed : int
    columns : sequence of str, optional
        Column names for array input.

    Attributes
    ----------
    chain_ : Chain
    posterior_ : LogPosterior
    """

    def __init__(self, model="interval-mean", psi=0.1, V=None, box=(-10.0, 10.0), prior="flat",
                 prior_mean=None, prior_sd=None, B=5000, burn_in=None, proposal_sd=None, init=None,
                 tune=0, seed=0, columns=None):
        self.model = model
        self.psi = psi
        self.V = V
        self.box = box
        self.prior = prior
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.B = B
        self.burn_in = burn_in
        self.proposal_sd = proposal_sd
        self.init = init
        self.tune = tune
        self.seed = seed
        self.columns = columns

    def fit(self, X, y=None):
        target = self._setup(X)
        box = target.box
        if self.init is None:
            init = map_maximize(target, box, seed=self.seed)[0]
        else:
            init = np.atleast_1d(np.asarray(self.init, dtype=float))
        sd = (box.upper - box.lower) / 10.0 if self.proposal_sd is None else self.proposal_sd
        prop = ProposalSpec(np.broadcast_to(np.asarray(sd, dtype=float), (box.d,)))
        if self.tune:
            prop = tune_proposal(target, init, prop, self.B, self.tune, self.seed + 1)
        self.chain_ = metropolis(target, init, prop, self.B, self.burn_in, self.seed)
        return self


class QuantileSetEstimator(PosteriorSampler):
    """Per-coordinate interval between the ``pi_n`` and ``1 - pi_n`` posterior quantiles.

    ``pi_n`` is a number in ``(0, 0.5)`` or one of ``"exp-sqrt-n"``,
    ``"inv-n"``, ``"inv-log-n"``.  After fitting, ``intervals_`` has shape
    ``(d, 2)``.
    """

    def __init__(self, model="interval-mean", psi=0.1, V=None, box=(-10.0, 10.0), prior="flat",
                 prior_mean=None, prior_sd=None, B=5000, burn_in=None, proposal_sd=None, init=None,
                 tune=0, seed=0, columns=None, pi_n="inv-n"):
        super().__init__(model, psi, V, box, prior, prior_mean, prior_sd, B, burn_in, proposal_sd,
                         init, tune, seed, columns)
        self.pi_n = pi_n

    def fit(self, X, y=None):
        super().fit(X)
        pi = _pi(self.pi_n, self.n_)
        self.estimates_ = [quantile_set_estimate(self.chain_, j, pi) for j in range(self.chain_.d)]
        self.intervals_ = np.array([e.as_tuple() for e in self.estimates_])
        return self

    def predict(self, theta) -> np.ndarray:
        """Whether each row of ``theta`` lies in the product of the intervals."""
        check_is_fitted(self, "intervals_")
        th = check_theta(theta, self.intervals_.shape[0])
        return np.all((th >= self.intervals_[:, 0]) & (th <= self.intervals_[:, 1]), axis=1)


class LevelSetEstimator(_PosteriorBase):
    """Level set ``{theta : max ln p - ln p(theta) <= eps_n}`` of the log posterior.

    Parameters
    ----------
    epsilon : float or str
        Cut-off, or one of ``"sqrt-n"``, ``"log-n"``, ``"loglog-n"``.
    grid_spacing : float, optional
        Grid step for ``d <= 2``; a 1/400 of the narrowest box side by
        default.  For ``d >= 3`` a tuned Metropolis chain of length ``B``
        is filtered instead.

    Attributes
    ----------
    region_ : LevelSetRegion
    hull_ : ndarray of shape (d, 2)
    """

    def __init__(self, model="interval-mean", psi=0.1, V=None, box=(-10.0, 10.0), prior="flat",
                 prior_mean=None, prior_sd=None, epsilon="loglog-n", grid_spacing=None, B=20000,
                 seed=0, columns=None):
        self.model = model
        self.psi = psi
        self.V = V
        self.box = box
        self.prior = prior
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.epsilon = epsilon
        self.grid_spacing = grid_spacing
        self.B = B
        self.seed = seed
        self.columns = columns

    def fit(self, X, y=None):
        target = self._setup(X)
        box = target.box
        eps = _eps(self.epsilon, self.n_)
        if box.d <= 2:
            spacing = self.grid_spacing or float(np.min(box.upper - box.lower)) / 400.0
            resolution = spacing
        else:
            start = map_maximize(target, box, seed=self.seed)[0]
            prop = tune_proposal(target, start, ProposalSpec((box.upper - box.lower) / 20.0),
                                 min(self.B, 5000), 2, self.seed + 1)
            resolution = metropolis(target, start, prop, self.B, None, self.seed)
        self.region_ = level_set_region(target, box, eps, resolution, seed=self.seed)
        lo, hi = self.region_.hull
        self.hull_ = np.column_stack([lo, hi])
        self.threshold_ = self.region_.threshold
        return self

    def decision_function(self, theta) -> np.ndarray:
        """Log posterior minus the level-set threshold."""
        check_is_fitted(self, "region_")
        return self.score_samples(theta) - self.threshold_

    def predict(self, theta) -> np.ndarray:
        return self.decision_function(theta) >= 0


class MomentSelector(BaseEstimator):
    """Maximum posterior selection over moment subsets and free-parameter masks.

    Parameters
    ----------
    approach : {"a2", "a1"}
        Working Gaussian priors (``a2``) or exponential bias priors with a
        candidate prior (``a1``).
    sigma_n2 : float or {"n", "n2"}
        Working-prior variance for ``a2``.
    alpha : float
        Exponent of the ``a1`` candidate prior ``n**(alpha (m - t))``.
    candidate_prior : {"power", "uniform"}
    moment_subsets, free_masks : list of lists, optional
        Candidate restrictions (0-based); all non-empty subsets by default.

    Attributes
    ----------
    posterior_ : CandidatePosterior
    selected_ : Combination
    weights_ : ndarray
    """

    def __init__(self, model=None, psi=0.1, V=None, box=None, approach="a2", sigma_n2="n2", alpha=1.0,
                 candidate_prior="power", prior="flat", prior_mean=None, prior_sd=None,
                 moment_subsets=None, free_masks=None, seed=0, columns=None):
        self.model = model
        self.psi = psi
        self.V = V
        self.box = box
        self.approach = approach
        self.sigma_n2 = sigma_n2
        self.alpha = alpha
        self.candidate_prior = candidate_prior
        self.prior = prior
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.moment_subsets = moment_subsets
        self.free_masks = free_masks
        self.seed = seed
        self.columns = columns

    def fit(self, X, y=None):
        model = check_model(self.model)
        data = check_dataset(X, self.columns)
        hyper = check_hyper(self.psi, self.V, model.p)
        box = None if self.box is None else check_box(self.box, model.d)
        cands = enumerate_candidates(model.p, model.d, self.moment_subsets, self.free_masks)
        n = data.n
        if self.approach == "a1":
            if box is None:
                raise ValueError("approach a1 needs a bounded box for its parameter prior")
            prior = check_prior(self.prior, self.prior_mean, self.prior_sd, box)
            post = mpc_select(cands, data, model, hyper, "a1", alpha=self.alpha, theta_prior=prior,
                              candidate_prior=self.candidate_prior, seed=self.seed)
        else:
            s2 = {"n": float(n), "n2": float(n) ** 2}.get(self.sigma_n2, self.sigma_n2)
            if not (isinstance(s2, float) or isinstance(s2, int)) or not math.isfinite(s2) or s2 <= 0:
                raise ValueError(f"sigma_n2 must be 'n', 'n2' or a positive number, got {self.sigma_n2!r}")
            post = mpc_select(cands, data, model, hyper, "a2", sigma_n2=float(s2), box=box, seed=self.seed)
        self.model_ = model
        self.posterior_ = post
        self.selected_ = post.argmax
        self.weights_ = post.weights
        return self
