"""Set estimators for the identified region.

Two estimators are provided:

* the posterior quantile interval ``[F_g^-1(pi_n), F_g^-1(1 - pi_n)]`` of a
  scalar map ``g`` computed from a Metropolis chain, and
* the level set ``{theta : max ln p - ln p(theta) <= eps_n}`` of the
  unnormalised log posterior, on a grid (``d <= 2``) or over chain draws.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .core import ThetaBox
from .mcmc import Chain, chain_quantile

__all__ = [
    "IntervalEstimate",
    "LevelSetRegion",
    "quantile_set_estimate",
    "epsilon_schedule",
    "map_maximize",
    "level_set_region",
    "grid_points",
    "hausdorff",
    "save_level_set",
]


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    pi_n: float
    g: str = "theta"

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")
        if not 0.0 < self.pi_n < 0.5:
            raise ValueError(f"pi_n must lie in (0, 0.5), got {self.pi_n}")

    def as_tuple(self):
        return (self.lower, self.upper)


@dataclass(frozen=True)
class LevelSetRegion:
    """Points whose log posterior is within ``epsilon_n`` of the maximum.

    ``points`` are accepted grid points (``spacing`` set) or accepted chain
    draws (``spacing`` is ``None``).
    """

    epsilon_n: float
    max_log_post: float
    argmax_theta: np.ndarray
    points: np.ndarray
    values: np.ndarray
    spacing: np.ndarray | None = None

    @property
    def threshold(self) -> float:
        return self.max_log_post - self.epsilon_n

    @property
    def hull(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate ``(min, max)`` of the accepted points."""
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def interval(self) -> tuple[float, float]:
        """The hull of a one-dimensional region."""
        if self.points.shape[1] != 1:
            raise ValueError("interval is defined only for one-dimensional regions")
        lo, hi = self.hull
        return float(lo[0]), float(hi[0])


def quantile_set_estimate(chain: Chain, g, pi_n: float, description: str | None = None) -> IntervalEstimate:
    """Interval between the ``pi_n`` and ``1 - pi_n`` posterior quantiles of ``g``."""
    if not 0.0 < pi_n < 0.5:
        raise ValueError(f"pi_n must lie in (0, 0.5), got {pi_n}")
    lo = chain_quantile(chain, g, pi_n)
    hi = chain_quantile(chain, g, 1.0 - pi_n)
    if description is None:
        description = "theta" if g is None else (f"theta[{g}]" if isinstance(g, int) else getattr(g, "__name__", "g"))
    return IntervalEstimate(lo, hi, pi_n, description)


def epsilon_schedule(n: int, kind: str = "loglog-n") -> float:
    """Level-set cut-off: ``sqrt(n)``, ``ln n`` or ``ln ln n``."""
    if n < 3:
        raise ValueError(f"need n >= 3 for a positive cut-off, got {n}")
    if kind == "sqrt-n":
        return math.sqrt(n)
    if kind == "log-n":
        return math.log(n)
    if kind == "loglog-n":
        return math.log(math.log(n))
    raise ValueError(f"unknown epsilon kind {kind!r}")


def _batch_eval(target, pts: np.ndarray, chunk: int = 200_000) -> np.ndarray:
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        block = pts[s:s + chunk]
        vals = np.asarray(target(block), dtype=float)
        if vals.shape != (block.shape[0],):
            vals = np.array([float(target(t)) for t in block])
        out[s:s + chunk] = vals
    return out


def _default_starts(box: ThetaBox, k: int, seed: int) -> np.ndarray:
    u = qmc.Sobol(d=box.d, scramble=True, seed=seed).random(k)
    return qmc.scale(u, box.lower, box.upper)


def map_maximize(
    target: Callable[[np.ndarray], float],
    box: ThetaBox,
    starts: Sequence | None = None,
    *,
    n_starts: int = 8,
    seed: int = 0,
    tol: float = 1e-10,
) -> tuple[np.ndarray, float]:
    """Multi-start bounded Nelder-Mead ascent of ``target`` inside ``box``.

    Starts with ``-inf`` target are skipped; the best local result (or the
    best start, if no refinement improved on it) is returned.
    """
    if starts is None:
        starts = _default_starts(box, n_starts, seed)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[1] != box.d:
        starts = starts.reshape(-1, box.d)
    bounds = list(zip(box.lower, box.upper))

    def neg(t):
        v = float(target(t))
        return 1e300 if v == -math.inf else -v

    best_t, best_v = None, -math.inf
    for s in box.clip(starts):
        v0 = float(target(s))
        if v0 == -math.inf:
            continue
        if v0 > best_v:
            best_t, best_v = s.copy(), v0
        span = 0.05 * (box.upper - box.lower)
        simplex = np.vstack([s] + [box.clip(s + np.eye(box.d)[j] * span[j] * (1 if s[j] + span[j] <= box.upper[j] else -1))
                                   for j in range(box.d)])
        res = minimize(neg, s, method="Nelder-Mead", bounds=bounds,
                       options={"xatol": tol, "fatol": tol, "maxiter": 4000 * box.d,
                                "initial_simplex": simplex})
        t = box.clip(res.x)
        v = float(target(t))
        if v > best_v:
            best_t, best_v = t, v
    if best_t is None:
        raise ValueError("target is -inf at every start")
    return best_t, best_v


def grid_points(box: ThetaBox, spacing) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid over ``box`` with (approximately) the requested spacing."""
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (box.d,))
    axes = []
    for lo, hi, h in zip(box.lower, box.upper, spacing):
        k = int(round((hi - lo) / h)) + 1
        axes.append(np.linspace(lo, hi, max(k, 2)))
    actual = np.array([a[1] - a[0] for a in axes])
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh]), actual


def level_set_region(
    target: Callable[[np.ndarray], float],
    box: ThetaBox,
    epsilon_n: float,
    resolution,
    *,
    n_starts: int = 8,
    seed: int = 0,
) -> LevelSetRegion:
    """Accepted points of ``{theta : max target - target(theta) <= epsilon_n}``.

    ``resolution`` is a grid spacing (scalar or per-axis) or a :class:`Chain`
    whose draws are filtered.  The maximum comes from :func:`map_maximize`,
    started from the best evaluated points and a Sobol design.
    """
    if not epsilon_n > 0:
        raise ValueError("epsilon_n must be positive")
    if isinstance(resolution, Chain):
        pts = np.asarray(resolution.draws)
        values = np.asarray(resolution.log_post)
        spacing = None
    else:
        if box.d > 2:
            raise ValueError("grids are limited to d <= 2; pass a Chain instead")
        pts, spacing = grid_points(box, resolution)
        values = _batch_eval(target, pts)
    finite = np.isfinite(values)
    top = pts[finite][np.argsort(values[finite])[-min(4, int(finite.sum())):]] if finite.any() else np.empty((0, box.d))
    starts = np.vstack([top, _default_starts(box, n_starts, seed)])
    theta_star, vmax = map_maximize(target, box, starts)
    keep = values >= vmax - epsilon_n
    if not keep.any():
        raise ValueError("no point passes the threshold; epsilon_n is below optimizer tolerance")
    return LevelSetRegion(float(epsilon_n), float(vmax), np.asarray(theta_star), pts[keep], values[keep], spacing)


def hausdorff(A, B) -> float:
    """Exact Hausdorff distance between finite point sets under the Euclidean metric."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A.reshape(-1, 1) if A.ndim == 1 else A
    B = B.reshape(-1, 1) if B.ndim == 1 else B
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("Hausdorff distance needs non-empty sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError("point sets have different dimensions")
    return max(_directed(A, B), _directed(B, A))


def _distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances, rescaled per pair so squares never under- or overflow."""
    diff = A[:, None, :] - B[None, :, :]
    m = np.abs(diff).max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sqrt(np.sum((diff / safe[..., None]) ** 2, axis=-1))


def _directed(A, B, chunk=2048) -> float:
    """``max_a min_b |a - b|``.

    ``cdist`` runs on coordinates rescaled to unit magnitude; rows whose
    nearest distance is small enough for the squares to underflow are
    recomputed with the per-pair rescaled norm.
    """
    scale = max(float(np.abs(A).max()), float(np.abs(B).max()))
    scale = scale if scale > 0 else 1.0
    As, Bs = A / scale, B / scale
    worst = 0.0
    for s in range(0, A.shape[0], chunk):
        nearest = cdist(As[s:s + chunk], Bs).min(axis=1)
        for r in np.flatnonzero(nearest < 1e-100):
            nearest[r] = _distances(As[s + r:s + r + 1], Bs).min()
        worst = max(worst, float(nearest.max()))
    return worst * scale


def save_level_set(region: LevelSetRegion, path, names=None) -> None:
    """CSV of accepted points and values plus a JSON metadata sidecar."""
    path = Path(path)
    d = region.points.shape[1]
    names = list(names) if names is not None else [f"theta{j + 1}" for j in range(d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["log_post"])
        for row, v in zip(region.points, region.values):
            w.writerow([repr(float(x)) for x in row] + [repr(float(v))])
    meta = {
        "epsilon_n": region.epsilon_n,
        "max_log_post": region.max_log_post,
        "argmax_theta": [float(x) for x in region.argmax_theta],
        "threshold": region.threshold,
        "spacing": None if region.spacing is None else [float(x) for x in region.spacing],
        "accepted": int(region.points.shape[0]),
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
