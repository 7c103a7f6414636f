"""Joint moment and model selection by maximum posterior probability.

A candidate (:class:`Combination`) picks a non-empty subset of the moment
inequalities and the set of free parameter components; the remaining
components are fixed at zero.  Two ways of scoring candidates are offered:

``a1``
    Bias prior on the selected moments only, a proper prior on the free
    parameters over the box, and candidate prior weights ``n^(alpha (m - t))``.
``a2``
    Uniform candidate prior; every moment enters the likelihood, unselected
    moments get a ``N(0, sigma_n2)`` bias prior and the free parameters a
    ``N(0, n sigma_n2)`` prior.  The bias integrals are done in closed form
    with every Gaussian normalising constant kept, so evidences of
    candidates with different ``m`` and ``t`` are directly comparable.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import DataError, Dataset, Hyperparameters, MomentModel, ThetaBox, ThetaPrior
from .likelihood import (
    LogLikelihoodContext,
    _check_cov,
    _is_diagonal,
    _log_orthant,
    log_limited_likelihood,
)
from .quadrature import integrate_log, integrate_log_2d

__all__ = [
    "Combination",
    "CandidatePosterior",
    "ApproachTwoBlocks",
    "enumerate_candidates",
    "true_combination_oracle",
    "restrict_model",
    "log_integrated_likelihood_a1",
    "assemble_a2_blocks",
    "log_integrated_likelihood_a2",
    "candidate_prior_a1",
    "mpc_select",
    "posterior_weights",
    "save_selection_report",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, order=True)
class Combination:
    """Selected moments and free parameters, both as sorted 0-based index tuples."""

    moment_subset: tuple[int, ...]
    free_mask: tuple[int, ...] = ()

    def __post_init__(self):
        ms = tuple(sorted(int(i) for i in self.moment_subset))
        fm = tuple(sorted(int(i) for i in self.free_mask))
        if not ms:
            raise ValueError("a combination needs at least one moment")
        if len(set(ms)) != len(ms) or len(set(fm)) != len(fm):
            raise ValueError("duplicate indices in combination")
        if min(ms) < 0 or (fm and min(fm) < 0):
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "moment_subset", ms)
        object.__setattr__(self, "free_mask", fm)

    @property
    def m(self) -> int:
        return len(self.moment_subset)

    @property
    def t(self) -> int:
        return len(self.free_mask)

    def check(self, p: int, k: int) -> "Combination":
        if max(self.moment_subset) >= p or (self.free_mask and max(self.free_mask) >= k):
            raise ValueError(f"{self} has indices out of range for p={p}, k={k}")
        return self

    def label(self, model: MomentModel | None = None) -> str:
        if model is None:
            ms = ",".join(str(i + 1) for i in self.moment_subset)
            fm = ",".join(str(i + 1) for i in self.free_mask)
        else:
            ms = ",".join(model.moment_names[i] for i in self.moment_subset)
            fm = ",".join(model.param_names[i] for i in self.free_mask)
        return f"[{ms}]|[{fm}]"


def _subsets(items: Sequence[int], min_size: int) -> list[tuple[int, ...]]:
    out = []
    for r in range(min_size, len(items) + 1):
        out.extend(itertools.combinations(items, r))
    return out


def enumerate_candidates(
    p: int,
    k: int,
    moment_subsets: Iterable[Sequence[int]] | None = None,
    free_masks: Iterable[Sequence[int]] | None = None,
) -> list[Combination]:
    """All ``2^k (2^p - 1)`` combinations in lexicographic order.

    ``moment_subsets`` and ``free_masks``, when given, are allow-lists.
    """
    if p < 1 or k < 1:
        raise ValueError("p and k must be at least 1")
    allowed_m = None if moment_subsets is None else {tuple(sorted(s)) for s in moment_subsets}
    allowed_f = None if free_masks is None else {tuple(sorted(s)) for s in free_masks}
    out = []
    for ms in _subsets(range(p), 1):
        if allowed_m is not None and ms not in allowed_m:
            continue
        for fm in _subsets(range(k), 0):
            if allowed_f is not None and fm not in allowed_f:
                continue
            out.append(Combination(ms, fm))
    if not out:
        raise ValueError("no candidate survives the constraints")
    return sorted(out)


def true_combination_oracle(comb: Combination, A_pop, b_pop, box: ThetaBox, spacing: float) -> bool:
    """Grid check that the candidate's population region is non-empty.

    ``A_pop`` and ``b_pop`` give the population moments ``A theta + b``.  A
    grid point passes when every selected moment is at least ``-tol`` with
    ``tol`` the largest change of the moment across half a grid cell.
    """
    A = np.atleast_2d(np.asarray(A_pop, dtype=float))[list(comb.moment_subset)]
    b = np.asarray(b_pop, dtype=float)[list(comb.moment_subset)]
    if comb.t == 0:
        return bool(np.all(b >= 0.0))
    free = list(comb.free_mask)
    Af = A[:, free]
    sub = box.restrict(free)
    axes = [np.arange(lo, hi + 0.5 * spacing, spacing) for lo, hi in zip(sub.lower, sub.upper)]
    tol = np.abs(Af).sum(axis=1) * spacing / 2.0
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    for s in range(0, pts.shape[0], 500_000):
        vals = pts[s:s + 500_000] @ Af.T + b
        if np.any(np.all(vals >= -tol, axis=1)):
            return True
    return False


def restrict_model(model: MomentModel, moment_subset: Sequence[int], free: Sequence[int] | None = None) -> MomentModel:
    """Sub-model on the selected moments, parameterised by ``theta[free]``.

    Components outside ``free`` are held at zero.  ``free=None`` keeps the
    full parameter vector.
    """
    rows = list(moment_subset)
    names = tuple(model.moment_names[i] for i in rows)
    if free is None:
        cols = list(range(model.d))
    else:
        cols = list(free)
        if not cols:
            raise ValueError("use free=None for candidates without free parameters")
    pnames = tuple(model.param_names[j] for j in cols)
    if model.is_affine:
        def coefficients(c):
            A, b = model.coefficients(c)
            A = np.asarray(A, dtype=float)
            return A[:, rows][:, :, cols], np.asarray(b, dtype=float)[:, rows]

        return MomentModel(len(rows), len(cols), model.columns, "affine", coefficients,
                           moment_names=names, param_names=pnames)

    def evaluator(c, theta_free):
        theta = np.zeros(model.d)
        theta[cols] = theta_free
        return np.atleast_2d(model.evaluator(c, theta))[:, rows]

    return MomentModel(len(rows), len(cols), model.columns, "generic", evaluator=evaluator,
                       moment_names=names, param_names=pnames)


# --------------------------------------------------------------------------
# integration helpers


def _crossings_1d(alpha: np.ndarray, beta: np.ndarray) -> list[float]:
    """Roots of the affine functions ``alpha_j x + beta_j``."""
    nz = np.abs(alpha) > 0
    return list(-beta[nz] / alpha[nz])


def _integrate_affine(logf, lo, hi, alpha, beta, widths, *, rtol, order=10):
    """Integrate ``exp(logf)`` over a box of dimension 1 or 2.

    Sharp transitions sit on the lines ``alpha_j . x + beta_j = 0`` with
    widths ``widths_j``; they become breakpoints of the adaptive rule.
    """
    t = len(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        norms = np.linalg.norm(alpha, axis=1)
        h = np.min(np.where(norms > 0, widths / norms, np.inf), initial=np.inf)
    span = float(np.max(np.asarray(hi) - np.asarray(lo)))
    h = span / 64.0 if not np.isfinite(h) else min(h, span / 64.0)
    if t == 1:
        return integrate_log(lambda x: logf(x[:, None]), lo[0], hi[0],
                             _crossings_1d(alpha[:, 0], beta), rtol=rtol, order=order, scale=h)
    a1, a2 = alpha[:, 0], alpha[:, 1]
    outer = []
    # vertices of the line arrangement and line/edge intersections, projected to x
    for i, j in itertools.combinations(range(len(beta)), 2):
        det = a1[i] * a2[j] - a1[j] * a2[i]
        if det != 0:
            outer.append((-beta[i] * a2[j] + beta[j] * a2[i]) / det)
    for y in (lo[1], hi[1]):
        outer += _crossings_1d(a1, beta + a2 * y)
    outer += list(-beta[(a2 == 0) & (a1 != 0)] / a1[(a2 == 0) & (a1 != 0)])

    def inner_breaks(x):
        return _crossings_1d(a2, beta + a1 * x)

    def f2(x, ys):
        pts = np.column_stack([np.full(ys.shape, x), ys])
        return logf(pts)

    return integrate_log_2d(f2, lo, hi, outer, inner_breaks, rtol=rtol, order=order, scale=h)


def _affine_lines(fn, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(alpha, beta)`` of a batch-affine map ``fn: (N, t) -> (N, q)``."""
    pts = np.vstack([np.zeros(t), np.eye(t)])
    vals = np.asarray(fn(pts))
    beta = vals[0]
    alpha = (vals[1:] - beta).T
    return alpha, beta


def _mc_log_mean(logf, sampler, mc_samples, seed) -> float:
    rng = np.random.default_rng(seed)
    pts = sampler(mc_samples, rng)
    vals = np.asarray(logf(pts))
    return float(logsumexp(vals) - math.log(mc_samples))


# --------------------------------------------------------------------------
# approach 1


def log_integrated_likelihood_a1(
    comb: Combination,
    data: Dataset,
    model: MomentModel,
    hyper: Hyperparameters,
    theta_prior: ThetaPrior,
    *,
    rtol: float = 1e-6,
    mc_samples: int = 65_536,
    seed: int = 0,
) -> float:
    """Log evidence of ``comb`` with the bias integrated out analytically.

    The free parameters are integrated against ``theta_prior`` restricted
    to the free coordinates: adaptive quadrature for ``t <= 2``, Monte Carlo
    draws from the prior otherwise.  ``t = 0`` is a point evaluation at
    ``theta = 0``.
    """
    comb.check(model.p, model.d)
    sub_hyper = hyper.subset(comb.moment_subset)
    if comb.t == 0:
        sub = restrict_model(model, comb.moment_subset)
        ctx = LogLikelihoodContext(sub, data, sub_hyper, seed=seed)
        return float(log_limited_likelihood(ctx, np.zeros(model.d)))
    sub = restrict_model(model, comb.moment_subset, comb.free_mask)
    ctx = LogLikelihoodContext(sub, data, sub_hyper, seed=seed)
    prior = theta_prior.marginal(comb.free_mask)

    def logf(th):
        return prior.logpdf(th) + log_limited_likelihood(ctx, th)

    if comb.t >= 3 or not model.is_affine:
        if comb.t >= 3:
            return _mc_log_mean(lambda th: log_limited_likelihood(ctx, th), prior.sample, mc_samples, seed)
        none = np.empty((0, comb.t))
        return _integrate_affine(logf, prior.box.lower, prior.box.upper,
                                 none, np.empty(0), np.empty(0), rtol=rtol)[0]
    alpha, beta = _affine_lines(lambda th: ctx.moment_mean(th) - ctx.z_shift, comb.t)
    widths = np.sqrt(np.diag(ctx.z_cov))
    val, _ = _integrate_affine(logf, prior.box.lower, prior.box.upper, alpha, beta, widths, rtol=rtol)
    return val


def candidate_prior_a1(comb: Combination, n: int, alpha: float) -> float:
    """Log prior weight ``alpha (m - t) ln n`` (unnormalised)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    return alpha * (comb.m - comb.t) * math.log(n)


# --------------------------------------------------------------------------
# approach 2


@dataclass(frozen=True)
class ApproachTwoBlocks:
    """Blocks of ``S_n = V/n + blockdiag(0, sigma_n2 I)`` after reordering.

    ``S_n^-1 = n [[Sigma1, Sigma3], [Sigma3', Sigma2]]`` with the selected
    moments first.  ``V2 = V22 + n sigma_n2 I``.
    """

    selected: tuple[int, ...]
    unselected: tuple[int, ...]
    n: int
    sigma_n2: float
    S_n: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    Sigma3: np.ndarray
    V2: np.ndarray
    V_perm: np.ndarray = field(repr=False, default=None)

    def inverse(self) -> np.ndarray:
        """``S_n^-1`` reassembled from the blocks."""
        top = np.hstack([self.Sigma1, self.Sigma3])
        bottom = np.hstack([self.Sigma3.T, self.Sigma2])
        return self.n * np.vstack([top, bottom])


def assemble_a2_blocks(comb: Combination, hyper: Hyperparameters, n: int, sigma_n2: float) -> ApproachTwoBlocks:
    """Reorder ``V`` as (selected, unselected) and block-invert ``S_n``.

    The inverse is formed through the Schur complement of the unselected
    block, which stays accurate when ``sigma_n2`` dwarfs ``V / n``.
    """
    if not sigma_n2 > 0:
        raise ValueError("sigma_n2 must be positive")
    p = hyper.p
    if max(comb.moment_subset) >= p:
        raise ValueError(f"{comb} selects moments beyond p={p}")
    sel = tuple(comb.moment_subset)
    uns = tuple(j for j in range(p) if j not in sel)
    perm = list(sel + uns)
    Vp = hyper.V[np.ix_(perm, perm)]
    m = len(sel)
    S = Vp / n
    S[m:, m:] += sigma_n2 * np.eye(p - m)
    S11, S12, S22 = S[:m, :m], S[:m, m:], S[m:, m:]
    try:
        if p > m:
            S22_inv = np.linalg.inv(S22)
            schur = S11 - S12 @ S22_inv @ S12.T
        else:
            S22_inv = np.empty((0, 0))
            schur = S11
        _check_cov(0.5 * (schur + schur.T))
    except (np.linalg.LinAlgError, DataError):
        raise np.linalg.LinAlgError("S_n is singular; V is not positive definite") from None
    P11 = np.linalg.inv(schur)
    P11 = 0.5 * (P11 + P11.T)
    P12 = -P11 @ S12 @ S22_inv
    P22 = S22_inv + S22_inv @ S12.T @ P11 @ S12 @ S22_inv
    V2 = Vp[m:, m:] + n * sigma_n2 * np.eye(p - m)
    return ApproachTwoBlocks(sel, uns, int(n), float(sigma_n2), S, P11 / n,
                             0.5 * (P22 + P22.T) / n, P12 / n, V2, Vp)


class _A2Integrand:
    """Log of (bias-integrated likelihood x free-parameter prior) for one candidate."""

    def __init__(self, comb, data, model, hyper, sigma_n2, seed=0):
        if not model.is_affine:
            raise DataError("approach 2 requires an affine moment model")
        comb.check(model.p, model.d)
        self.comb = comb
        n = data.n
        self.n = n
        self.blocks = blk = assemble_a2_blocks(comb, hyper, n, sigma_n2)
        A_bar, b_bar = model.averaged_terms(data)
        free = list(comb.free_mask)
        self.A = A_bar[:, free]
        self.b = b_bar
        self.sel = list(blk.selected)
        self.uns = list(blk.unselected)
        psi = hyper.psi[self.sel]
        self.psi = psi
        m = len(self.sel)
        # Sigma1^-1 Sigma3, the regression of selected on unselected residuals
        self.coupling = np.linalg.solve(blk.Sigma1, blk.Sigma3) if self.uns else np.zeros((m, 0))
        s1_inv = np.linalg.inv(blk.Sigma1)
        s1_inv = 0.5 * (s1_inv + s1_inv.T)
        self.z_cov = s1_inv / n
        self.z_chol = _check_cov(self.z_cov)
        self.z_diag = _is_diagonal(self.z_cov)
        self.z_shift = s1_inv @ psi / n
        self.const = float(np.sum(np.log(psi)) + psi @ s1_inv @ psi / (2.0 * n))
        k = len(self.uns)
        if k:
            C = blk.V2 / n
            self.C_inv = np.linalg.inv(C)
            _, logdet = np.linalg.slogdet(C)
            self.const += -0.5 * (k * _LOG_2PI + logdet)
        self.prior_var = n * sigma_n2
        self.t = comb.t
        self.seed = seed

    def moments(self, th):
        th = np.atleast_2d(th)
        M = th @ self.A.T + self.b if self.t else np.broadcast_to(self.b, (th.shape[0], self.b.size))
        return M[:, self.sel], M[:, self.uns]

    def orthant_mean(self, th):
        Ms, Mc = self.moments(th)
        return Ms + Mc @ self.coupling.T - self.z_shift

    def log_likelihood(self, th):
        Ms, Mc = self.moments(th)
        mu = Ms + Mc @ self.coupling.T
        out = self.const - mu @ self.psi
        if self.uns:
            out = out - 0.5 * np.einsum("ij,jk,ik->i", Mc, self.C_inv, Mc)
        out = out + _log_orthant(mu - self.z_shift, self.z_cov, self.z_chol, self.z_diag, 65_536, self.seed)
        return out

    def log_prior(self, th):
        th = np.atleast_2d(th)
        return -0.5 * self.t * (_LOG_2PI + math.log(self.prior_var)) - 0.5 * np.sum(th * th, axis=1) / self.prior_var

    def __call__(self, th):
        return self.log_likelihood(th) + self.log_prior(th)


def log_integrated_likelihood_a2(
    comb: Combination,
    data: Dataset,
    model: MomentModel,
    hyper: Hyperparameters,
    sigma_n2: float,
    *,
    box: ThetaBox | None = None,
    rtol: float = 1e-6,
    mc_samples: int = 65_536,
    seed: int = 0,
) -> float:
    """Log evidence of ``comb`` under the Gaussian working priors.

    Free parameters are integrated over ``+-8`` prior standard deviations,
    intersected with ``box`` when one is given.
    """
    f = _A2Integrand(comb, data, model, hyper, sigma_n2, seed=seed)
    if comb.t == 0:
        return float(f.log_likelihood(np.zeros((1, 0)))[0])
    reach = 8.0 * math.sqrt(f.prior_var)
    lo = np.full(comb.t, -reach)
    hi = np.full(comb.t, reach)
    if box is not None:
        free = list(comb.free_mask)
        lo = np.maximum(lo, box.lower[free])
        hi = np.minimum(hi, box.upper[free])
        if np.any(lo >= hi):
            raise ValueError("box lies outside the integration range")
    if comb.t >= 3:
        def sampler(size, rng):
            return rng.uniform(lo, hi, size=(size, comb.t))

        vol = float(np.sum(np.log(hi - lo)))
        return _mc_log_mean(f, sampler, mc_samples, seed) + vol
    # features: orthant edges of the selected moments, centres of the unselected ones
    a_sel, b_sel = _affine_lines(f.orthant_mean, comb.t)
    w_sel = np.sqrt(np.diag(f.z_cov))
    alpha, beta, widths = a_sel, b_sel, w_sel
    if f.uns:
        a_uns, b_uns = _affine_lines(lambda th: f.moments(th)[1], comb.t)
        alpha = np.vstack([alpha, a_uns])
        beta = np.concatenate([beta, b_uns])
        widths = np.concatenate([widths, np.sqrt(np.diag(f.blocks.V2)) / math.sqrt(f.n)])
    val, _ = _integrate_affine(f, lo, hi, alpha, beta, widths, rtol=rtol)
    return val


# --------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class CandidatePosterior:
    """Normalised candidate posterior.

    ``weights``, ``log_evidence`` and ``log_prior`` are aligned with
    ``candidates``.
    """

    candidates: tuple[Combination, ...]
    weights: np.ndarray
    log_evidence: np.ndarray
    log_prior: np.ndarray
    approach: str
    params: dict
    argmax: Combination

    def weight(self, comb: Combination) -> float:
        idx = [i for i, c in enumerate(self.candidates) if c == comb]
        if not idx:
            raise KeyError(comb)
        return float(self.weights[idx[0]])

    def as_dict(self) -> dict[Combination, float]:
        out: dict[Combination, float] = {}
        for c, w in zip(self.candidates, self.weights):
            out.setdefault(c, float(w))
        return out

    def ranked(self) -> list[int]:
        """Candidate indices by weight, descending; ties in lexicographic order."""
        return sorted(range(len(self.candidates)), key=lambda i: (-self.weights[i], self.candidates[i]))


def posterior_weights(log_scores) -> np.ndarray:
    """Normalise log scores to probabilities with a stable log-sum-exp."""
    total = np.asarray(log_scores, dtype=float)
    if np.all(total == -np.inf):
        raise ValueError("every candidate has zero evidence")
    return np.exp(total - logsumexp(total))


def mpc_select(
    candidates: Sequence[Combination],
    data: Dataset,
    model: MomentModel,
    hyper: Hyperparameters,
    approach: str = "a2",
    *,
    alpha: float = 1.0,
    theta_prior: ThetaPrior | None = None,
    candidate_prior: str = "power",
    sigma_n2: float | None = None,
    box: ThetaBox | None = None,
    rtol: float = 1e-6,
    seed: int = 0,
) -> CandidatePosterior:
    """Score every candidate and normalise to posterior probabilities.

    ``approach="a1"`` uses ``theta_prior`` inside candidates and, with
    ``candidate_prior="power"``, prior weights ``n^(alpha (m - t))``;
    ``candidate_prior="uniform"`` gives equal weights.  ``approach="a2"``
    uses equal weights and ``sigma_n2`` (default ``n**2``).
    """
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("no candidates")
    n = data.n
    if approach == "a1":
        if theta_prior is None:
            raise ValueError("approach a1 needs a theta prior")
        if candidate_prior not in ("power", "uniform"):
            raise ValueError(
                f"candidate prior {candidate_prior!r} not supported; only 'power' (polynomial in n) "
                "and 'uniform' are allowed"
            )
        log_ev = np.array([log_integrated_likelihood_a1(c, data, model, hyper, theta_prior, rtol=rtol, seed=seed)
                           for c in candidates])
        log_pr = np.array([candidate_prior_a1(c, n, alpha) if candidate_prior == "power" else 0.0
                           for c in candidates])
        params = {"alpha": alpha if candidate_prior == "power" else None, "candidate_prior": candidate_prior}
    elif approach == "a2":
        sigma_n2 = float(n) ** 2 if sigma_n2 is None else float(sigma_n2)
        log_ev = np.array([log_integrated_likelihood_a2(c, data, model, hyper, sigma_n2, box=box, rtol=rtol, seed=seed)
                           for c in candidates])
        log_pr = np.zeros(len(candidates))
        params = {"sigma_n2": sigma_n2}
    else:
        raise ValueError(f"unknown approach {approach!r}")
    weights = posterior_weights(log_ev + log_pr)
    top = weights.max()
    best = min(c for c, w in zip(candidates, weights) if w == top)
    return CandidatePosterior(candidates, weights, log_ev, log_pr, approach, params, best)


def save_selection_report(post: CandidatePosterior, path, model: MomentModel | None = None) -> None:
    """CSV with one row per candidate, sorted by weight, plus a JSON sidecar."""
    path = Path(path)

    def names(idx, pool):
        return ";".join(pool[i] if pool else str(i + 1) for i in idx)

    mn = model.moment_names if model is not None else None
    pn = model.param_names if model is not None else None
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["moment_subset", "free_mask", "log_evidence", "log_prior", "posterior_weight"])
        for i in post.ranked():
            c = post.candidates[i]
            w.writerow([names(c.moment_subset, mn), names(c.free_mask, pn),
                        repr(float(post.log_evidence[i])), repr(float(post.log_prior[i])),
                        repr(float(post.weights[i]))])
    meta = {"approach": post.approach, "params": post.params,
            "argmax": {"moment_subset": list(post.argmax.moment_subset),
                       "free_mask": list(post.argmax.free_mask),
                       "label": post.argmax.label(model)}}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
