"""Random-walk Metropolis sampling and empirical posterior quantiles."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = ["Chain", "ProposalSpec", "metropolis", "tune_proposal", "chain_quantile", "chain_values",
           "save_chain", "load_chain"]


@dataclass(frozen=True)
class ProposalSpec:
    """Normal random-walk increments.

    Either independent components with standard deviations ``sd`` or, when
    ``cov`` is given, a full covariance matrix (``sd`` is then its diagonal
    square root).
    """

    sd: np.ndarray | None = None
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.cov is not None:
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise ValueError("proposal covariance must be square and symmetric")
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("proposal covariance must be positive definite") from None
            cov.setflags(write=False)
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "sd", np.sqrt(np.diag(cov)))
            object.__setattr__(self, "_chol", chol)
            return
        if self.sd is None:
            raise ValueError("give sd or cov")
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if sd.ndim != 1 or np.any(sd <= 0) or not np.all(np.isfinite(sd)):
            raise ValueError(f"proposal sd must be positive, got {sd}")
        sd.setflags(write=False)
        object.__setattr__(self, "sd", sd)
        object.__setattr__(self, "_chol", None)

    @classmethod
    def from_variance(cls, var, d: int = 1) -> "ProposalSpec":
        return cls(np.sqrt(np.broadcast_to(np.asarray(var, dtype=float), (d,))))

    def steps(self, z: np.ndarray) -> np.ndarray:
        """Map standard normal rows ``z`` to increments."""
        if self._chol is not None:
            return z @ self._chol.T
        sd = self.sd if self.sd.size == z.shape[1] else np.broadcast_to(self.sd, (z.shape[1],))
        return z * sd


@dataclass(frozen=True)
class Chain:
    """Post burn-in Metropolis draws and their unnormalised log posterior."""

    draws: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    seed: int
    burn_in: int

    def __post_init__(self):
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        log_post = np.asarray(self.log_post, dtype=float)
        if draws.shape[0] != log_post.shape[0]:
            raise ValueError("draws and log_post lengths differ")
        if not np.all(np.isfinite(log_post)):
            raise ValueError("chain contains non-finite log-posterior values")
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance rate outside [0, 1]")
        draws.setflags(write=False)
        log_post.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "log_post", log_post)

    def __len__(self):
        return self.draws.shape[0]

    @property
    def d(self) -> int:
        return self.draws.shape[1]


def metropolis(
    target: Callable[[np.ndarray], float],
    init,
    proposal: ProposalSpec,
    B: int,
    burn_in: int | None = None,
    seed: int = 0,
) -> Chain:
    """Random-walk Metropolis with a symmetric normal proposal.

    Runs ``burn_in + B`` iterations and keeps the last ``B`` states.
    ``burn_in`` defaults to ``B // 10``.  Proposals with ``-inf`` target are
    always rejected; NaN or ``+inf`` target values raise.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if burn_in is None:
        burn_in = B // 10
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    theta = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = theta.size
    if proposal.sd.size not in (1, d) or (proposal.cov is not None and proposal.sd.size != d):
        raise ValueError(f"proposal has {proposal.sd.size} components, init has {d}")
    current = float(target(theta))
    if current == -math.inf:
        raise ValueError(f"initial value {theta} has zero posterior density")
    if not math.isfinite(current):
        raise RuntimeError(f"target returned {current} at the initial value")

    rng = np.random.default_rng(seed)
    total = burn_in + B
    steps = proposal.steps(rng.standard_normal((total, d)))
    log_u = np.log(rng.uniform(size=total))
    draws = np.empty((B, d))
    log_post = np.empty(B)
    accepted = 0
    for i in range(total):
        cand = theta + steps[i]
        value = float(target(cand))
        if math.isnan(value) or value == math.inf:
            raise RuntimeError(f"target returned {value} at {cand}")
        if value != -math.inf and log_u[i] < value - current:
            theta, current = cand, value
            if i >= burn_in:
                accepted += 1
        if i >= burn_in:
            draws[i - burn_in] = theta
            log_post[i - burn_in] = current
    return Chain(draws, log_post, accepted / B, int(seed), int(burn_in))


def tune_proposal(
    target: Callable[[np.ndarray], float],
    init,
    proposal: ProposalSpec,
    B: int = 2000,
    rounds: int = 3,
    seed: int = 0,
) -> ProposalSpec:
    """Random-walk covariance learned from pilot chains.

    Each round runs ``B`` iterations and sets the covariance to
    ``2.38**2 / d`` times the pilot draws' covariance, the usual scaling for
    near-Gaussian targets.  Later rounds start at the previous chain's last
    state.
    """
    theta = np.atleast_1d(np.asarray(init, dtype=float))
    d = theta.size
    for r in range(rounds):
        pilot = metropolis(target, theta, proposal, B, 0, seed + r)
        cov = np.atleast_2d(np.cov(pilot.draws, rowvar=False))
        if pilot.acceptance_rate > 0 and np.linalg.eigvalsh(cov)[0] > 1e-12 * max(np.trace(cov), 1e-300):
            proposal = ProposalSpec(cov=(2.38**2 / d) * cov)
        theta = pilot.draws[-1]
    return proposal


def chain_values(chain: Chain, g=None) -> np.ndarray:
    """Apply ``g`` to every draw.

    ``g`` may be ``None`` (the only coordinate of a 1-D chain), an integer
    coordinate index, or a callable on a ``(d,)`` vector.
    """
    if g is None:
        if chain.d != 1:
            raise ValueError("g is required for multi-dimensional chains")
        return chain.draws[:, 0]
    if isinstance(g, (int, np.integer)):
        return chain.draws[:, int(g)]
    return np.array([float(g(t)) for t in chain.draws])


def chain_quantile(chain: Chain, g, q: float) -> float:
    """Left-continuous empirical quantile ``inf{x : F(x) >= q}`` of ``g`` over the chain."""
    if len(chain) == 0:
        raise ValueError("empty chain")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    v = np.sort(chain_values(chain, g))
    k = math.ceil(round(q * v.size, 9))
    return float(v[max(k, 1) - 1])


def save_chain(chain: Chain, path, names=None) -> None:
    """Write draws as CSV (theta columns then ``log_post``) plus a JSON sidecar."""
    path = Path(path)
    names = list(names) if names is not None else [f"theta{j + 1}" for j in range(chain.d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["log_post"])
        for row, lp in zip(chain.draws, chain.log_post):
            w.writerow([repr(float(v)) for v in row] + [repr(float(lp))])
    meta = {"seed": chain.seed, "B": len(chain), "burn_in": chain.burn_in,
            "acceptance_rate": chain.acceptance_rate}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_chain(path) -> Chain:
    path = Path(path)
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    return Chain(arr[:, :-1], arr[:, -1], meta["acceptance_rate"], meta["seed"], meta["burn_in"])
