"""Limited-information likelihood with an exponential prior on the bias.

With ``psi`` the exponential-prior rates and ``V`` the scale matrix, the
bias can be integrated out in closed form::

    L(theta) = P(Z >= 0) * exp(-psi'mbar(theta) + psi'V psi / 2n) * prod(psi)

where ``Z ~ N(mbar(theta) - V psi / n, V / n)``.  Everything here is
computed in log space; the orthant term uses ``log_ndtr`` so that values
far outside the identified region stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .core import DataError, Dataset, Hyperparameters, MomentModel, ThetaPrior

__all__ = [
    "OrthantQuery",
    "orthant_probability",
    "log_orthant_probability",
    "orthant_bounds",
    "LogLikelihoodContext",
    "log_limited_likelihood",
    "log_posterior_unnorm",
    "LogPosterior",
]

DEFAULT_MC_SAMPLES = 65_536


def _is_diagonal(cov: np.ndarray) -> bool:
    off = cov - np.diag(np.diag(cov))
    return bool(np.max(np.abs(off), initial=0.0) < 1e-14 * np.max(np.diag(cov)))


def _check_cov(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``cov``; raises if it is not symmetric positive definite."""
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DataError(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14 * np.max(np.abs(cov))):
        raise DataError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError("covariance is not positive definite") from None


@dataclass(frozen=True)
class OrthantQuery:
    """``P(Z >= 0)`` for ``Z ~ N(mean, cov)``.

    ``method`` is ``"auto"`` (exact when ``cov`` is diagonal, Monte Carlo
    otherwise), ``"diagonal-exact"`` or ``"monte-carlo"``.
    """

    mean: np.ndarray
    cov: np.ndarray
    method: str = "auto"
    mc_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DataError(f"mean of length {mean.size} with covariance of shape {cov.shape}")
        if self.method not in ("auto", "diagonal-exact", "monte-carlo"):
            raise DataError(f"unknown orthant method {self.method!r}")
        if int(self.mc_samples) < 1:
            raise DataError("mc_samples must be at least 1")
        _check_cov(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def orthant_bounds(mean, cov) -> tuple[float, float]:
    """Union and single-coordinate bounds on ``P(Z >= 0)``.

    ``lower = max(0, 1 - p * Phi(-r))`` and ``upper = Phi(r)`` with
    ``r = min_j mean_j / sqrt(cov_jj)``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    _check_cov(cov)
    r = float(np.min(mean / np.sqrt(np.diag(cov))))
    upper = float(ndtr(r))
    lower = max(0.0, 1.0 - mean.size * float(ndtr(-r)))
    return lower, upper


def _mc_fraction(mean: np.ndarray, chol: np.ndarray, samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    half = (samples + 1) // 2
    z = rng.standard_normal((half, mean.size))
    z = np.concatenate([z, -z])[:samples]
    x = mean + z @ chol.T
    return float(np.count_nonzero(np.all(x >= 0.0, axis=1))) / samples


def _mc_checked(mean, cov, chol, samples, seed) -> float:
    prob = _mc_fraction(mean, chol, samples, seed)
    lower, upper = orthant_bounds(mean, cov)
    slack = 4.0 * math.sqrt(max(prob * (1.0 - prob), 0.25 / samples) / samples) + 1.0 / samples
    if prob < lower - slack or prob > upper + slack:
        raise RuntimeError(
            f"Monte Carlo orthant estimate {prob} outside bounds [{lower}, {upper}]"
        )
    return min(max(prob, lower), upper)


def orthant_probability(q: OrthantQuery) -> float:
    """Evaluate an :class:`OrthantQuery`."""
    diagonal = _is_diagonal(q.cov)
    if q.method == "diagonal-exact" and not diagonal:
        raise DataError("diagonal-exact requested for a non-diagonal covariance")
    if q.method == "diagonal-exact" or (q.method == "auto" and diagonal):
        return float(np.prod(ndtr(q.mean / np.sqrt(np.diag(q.cov)))))
    chol = _check_cov(q.cov)
    return _mc_checked(q.mean, q.cov, chol, int(q.mc_samples), int(q.seed))


def log_orthant_probability(mean, cov, method="auto", mc_samples=DEFAULT_MC_SAMPLES, seed=0):
    """``ln P(Z >= 0)``; ``mean`` may be a batch of shape ``(N, p)``.

    The diagonal case is a sum of ``log_ndtr`` terms and never underflows;
    the Monte Carlo case returns ``-inf`` when no draw lands in the orthant.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = _check_cov(cov)
    diagonal = _is_diagonal(cov)
    if method == "diagonal-exact" and not diagonal:
        raise DataError("diagonal-exact requested for a non-diagonal covariance")
    if method == "diagonal-exact":
        diagonal = True
    elif method == "monte-carlo":
        diagonal = False
    return _log_orthant(mean, cov, chol, diagonal, mc_samples, seed)


def _log_orthant(mean, cov, chol, diagonal, mc_samples, seed):
    if diagonal:
        out = np.sum(log_ndtr(mean / np.sqrt(np.diag(cov))), axis=-1)
        return float(out) if np.ndim(out) == 0 else out
    flat = np.atleast_2d(mean)
    probs = [_mc_checked(m, cov, chol, mc_samples, seed) for m in flat]
    out = np.array([math.log(p) if p > 0 else -math.inf for p in probs])
    return out.reshape(mean.shape[:-1]) if mean.ndim > 1 else float(out[0])


@dataclass(frozen=True)
class LogLikelihoodContext:
    """Model, data and hyperparameters with the constant pieces cached."""

    model: MomentModel
    data: Dataset
    hyper: Hyperparameters
    mc_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    A_bar: np.ndarray | None = field(init=False, default=None)
    b_bar: np.ndarray | None = field(init=False, default=None)
    quad_term: float = field(init=False, default=0.0)
    log_psi_sum: float = field(init=False, default=0.0)
    z_shift: np.ndarray | None = field(init=False, default=None, repr=False)
    z_cov: np.ndarray | None = field(init=False, default=None, repr=False)
    z_chol: np.ndarray | None = field(init=False, default=None, repr=False)
    z_diagonal: bool = field(init=False, default=True, repr=False)

    def __post_init__(self):
        if self.hyper.p != self.model.p:
            raise DataError(f"hyperparameters have p={self.hyper.p}, model has p={self.model.p}")
        if self.model.is_affine:
            A_bar, b_bar = self.model.averaged_terms(self.data)
            A_bar.setflags(write=False)
            b_bar.setflags(write=False)
            object.__setattr__(self, "A_bar", A_bar)
            object.__setattr__(self, "b_bar", b_bar)
        psi, V = self.hyper.psi, self.hyper.V
        object.__setattr__(self, "quad_term", float(psi @ V @ psi) / (2.0 * self.n))
        object.__setattr__(self, "log_psi_sum", float(np.sum(np.log(psi))))
        cov = V / self.n
        object.__setattr__(self, "z_shift", V @ psi / self.n)
        object.__setattr__(self, "z_cov", cov)
        object.__setattr__(self, "z_chol", _check_cov(cov))
        object.__setattr__(self, "z_diagonal", _is_diagonal(cov))

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def d(self) -> int:
        return self.model.d

    def moment_mean(self, theta) -> np.ndarray:
        """``mbar(theta)`` for ``theta`` of shape ``(d,)`` or ``(N, d)``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.d:
            raise DataError(f"theta has trailing dimension {theta.shape[-1]}, model has d={self.d}")
        if self.model.is_affine:
            return theta @ self.A_bar.T + self.b_bar
        flat = theta.reshape(-1, self.d)
        out = np.array([self.model.moments(self.data, t).mean(axis=0) for t in flat])
        return out.reshape(theta.shape[:-1] + (self.model.p,))


def log_limited_likelihood(ctx: LogLikelihoodContext, theta):
    """``ln L(theta)``; vectorised over a leading batch axis of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise DataError("theta must be finite")
    mbar = ctx.moment_mean(theta)
    log_p = _log_orthant(mbar - ctx.z_shift, ctx.z_cov, ctx.z_chol, ctx.z_diagonal,
                         ctx.mc_samples, ctx.seed)
    out = log_p - mbar @ ctx.hyper.psi + ctx.quad_term + ctx.log_psi_sum
    return float(out) if np.ndim(out) == 0 else out


def log_posterior_unnorm(ctx: LogLikelihoodContext, prior: ThetaPrior, theta):
    """``ln p(theta) + ln L(theta)``; ``-inf`` outside the prior's box."""
    theta = np.asarray(theta, dtype=float)
    if prior.d != ctx.d:
        raise DataError(f"prior has d={prior.d}, model has d={ctx.d}")
    lp = prior.logpdf(theta)
    if np.ndim(lp) == 0:
        return lp if lp == -math.inf else lp + log_limited_likelihood(ctx, theta)
    out = np.full(lp.shape, -np.inf)
    ok = np.isfinite(lp)
    if np.any(ok):
        out[ok] = lp[ok] + log_limited_likelihood(ctx, theta[ok])
    return out


class LogPosterior:
    """Callable unnormalised log posterior, for samplers and optimisers."""

    def __init__(self, ctx: LogLikelihoodContext, prior: ThetaPrior, offset: float = 0.0):
        self.ctx = ctx
        self.prior = prior
        self.offset = offset

    @property
    def box(self):
        return self.prior.box

    def __call__(self, theta):
        return log_posterior_unnorm(self.ctx, self.prior, theta) + self.offset
