"""Globally adaptive Gauss-Legendre quadrature for log-space integrands.

Integrands in this package span hundreds of orders of magnitude, so the
routines take ``log f`` and return ``log \\int f``.  Each panel is
estimated with an ``order``-point rule on the whole panel and on its two
halves; the difference is the error estimate.  The panel with the largest
error is bisected until the summed error is below ``rtol`` times the
running total.
"""

from __future__ import annotations

import heapq
import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = ["IntegrationError", "integrate_log", "integrate_log_2d", "geometric_partition"]


class IntegrationError(RuntimeError):
    """The adaptive rule ran out of panels before meeting its tolerance."""

    def __init__(self, msg, achieved_rtol):
        super().__init__(f"{msg} (achieved relative error {achieved_rtol:.3g})")
        self.achieved_rtol = achieved_rtol


@lru_cache(maxsize=8)
def _gl(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, np.log(w)


def _lse(v: np.ndarray) -> float:
    """``log sum exp(v)`` for small 1-D arrays (scipy's version is slow at this size)."""
    m = v.max()
    if m == -math.inf:
        return -math.inf
    return float(m + math.log(np.exp(v - m).sum()))


def _log_diff(la: float, lb: float) -> float:
    """``log |e^la - e^lb|``."""
    if la == lb:
        return -math.inf
    hi, lo = max(la, lb), min(la, lb)
    return hi + math.log(-math.expm1(lo - hi))


def geometric_partition(points: Sequence[float], a: float, b: float, h: float) -> np.ndarray:
    """Breakpoints in ``[a, b]`` refined geometrically around ``points``.

    Within every gap, extra points are placed at distances ``h, 2h, 4h, ...``
    from each end until they meet mid-gap.  Sharp features of width ``~h`` at
    the given points and slow tails far away then both get panels of a
    suitable size.
    """
    base = sorted({float(a), float(b)} | {float(p) for p in points if a < p < b})
    out = [base[0]]
    for lo, hi in zip(base[:-1], base[1:]):
        mid = 0.5 * (lo + hi)
        left, right = [], []
        step = h
        while lo + step < mid:
            left.append(lo + step)
            right.append(hi - step)
            step *= 2.0
        out.extend(left)
        out.extend(reversed(right))
        out.append(hi)
    return np.unique(np.array(out))


def integrate_log(
    logf: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    breakpoints: Sequence[float] = (),
    *,
    rtol: float = 1e-6,
    order: int = 10,
    max_panels: int = 4000,
    scale: float | None = None,
) -> tuple[float, float]:
    """Return ``(log integral, achieved relative error)`` of ``exp(logf)`` on ``[a, b]``.

    ``logf`` must accept a 1-D array and may return ``-inf``.  ``scale``,
    when given, is the width of the sharpest feature near the breakpoints
    and switches on :func:`geometric_partition`.
    """
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    x, logw = _gl(order)

    def rule(lo, hi):
        half = 0.5 * (hi - lo)
        c = 0.5 * (hi + lo)
        h2 = 0.5 * half
        nodes = np.concatenate([c + half * x, (lo + h2) + h2 * x, (c + h2) + h2 * x])
        vals = np.asarray(logf(nodes), dtype=float)
        k = len(x)
        if np.isnan(vals).any():
            raise ValueError("integrand returned NaN")
        whole = _lse(logw + vals[:k]) + math.log(half)
        parts = _lse(np.concatenate([logw + vals[k:2 * k], logw + vals[2 * k:]])) + math.log(h2)
        return parts, _log_diff(whole, parts)

    if scale is not None:
        edges = geometric_partition(breakpoints, a, b, scale)
    else:
        edges = np.unique(np.array([a, b] + [p for p in breakpoints if a < p < b], dtype=float))
    heap = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        est, err = rule(lo, hi)
        heapq.heappush(heap, (-err, lo, hi, est))

    while True:
        ests = np.fromiter((e[3] for e in heap), float, len(heap))
        errs = np.fromiter((-e[0] for e in heap), float, len(heap))
        total = _lse(ests)
        total_err = _lse(errs)
        if total == -math.inf:
            return -math.inf, 0.0
        achieved = math.exp(total_err - total)
        if achieved <= rtol:
            return float(total), achieved
        if len(heap) >= max_panels:
            raise IntegrationError("adaptive quadrature did not converge", achieved)
        _, lo, hi, _ = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise IntegrationError("panel width underflow", achieved)
        for l2, h2 in ((lo, mid), (mid, hi)):
            est, err = rule(l2, h2)
            heapq.heappush(heap, (-err, l2, h2, est))


def integrate_log_2d(
    logf: Callable[[np.ndarray, np.ndarray], np.ndarray],
    box_lo: Sequence[float],
    box_hi: Sequence[float],
    outer_breaks: Sequence[float] = (),
    inner_breaks: Callable[[float], Sequence[float]] | None = None,
    *,
    rtol: float = 1e-6,
    order: int = 10,
    scale: float | None = None,
) -> tuple[float, float]:
    """Iterated log-space integral of ``exp(logf(x, y))`` over a rectangle.

    ``logf(x, ys)`` receives a scalar ``x`` and an array ``ys``.
    ``inner_breaks(x)`` supplies breakpoints for the inner integral.
    """
    (x0, y0), (x1, y1) = box_lo, box_hi
    inner_rtol = rtol * 0.1
    worst = [0.0]

    def outer(xs):
        out = np.empty(len(xs))
        for i, xv in enumerate(xs):
            br = inner_breaks(xv) if inner_breaks is not None else ()
            val, acc = integrate_log(lambda ys: logf(xv, ys), y0, y1, br,
                                     rtol=inner_rtol, order=order, scale=scale)
            worst[0] = max(worst[0], acc)
            out[i] = val
        return out

    val, acc = integrate_log(outer, x0, x1, outer_breaks, rtol=rtol, order=order, scale=scale)
    return val, acc + worst[0]
