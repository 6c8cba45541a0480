"""Derivative-free scalar search and root finding.

All searches maximise. Candidates that evaluate to NaN or infinity are
skipped and counted. Exact ties go to the smallest argument.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "SearchResult",
    "SearchSpec",
    "SolverError",
    "bisect",
    "grid2d_search",
    "line_search",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    """A root or search problem could not be solved as posed."""


@dataclass(frozen=True)
class SearchSpec:
    """Bounds and effort for :func:`line_search`.

    With ``log_scale`` the search runs over ``log(x)``, so both bounds must
    be positive. ``tol`` is measured in that search coordinate.
    """

    lo: float
    hi: float
    grid_points: int = 64
    refine_iters: int = 40
    tol: float = 1e-6
    log_scale: bool = False

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("lo must not exceed hi")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        if self.log_scale and self.lo <= 0:
            raise ValueError("log-scale search needs a positive lower bound")

    def _to(self, x):
        return math.log(x) if self.log_scale else x

    def _from(self, u):
        return math.exp(u) if self.log_scale else u


class SearchResult(NamedTuple):
    x: float
    value: float


class _Tracker:
    def __init__(self, fn, spec):
        self.fn = fn
        self.spec = spec
        self.skipped = 0
        self.best_u = None
        self.best_v = -math.inf

    def __call__(self, u: float) -> float:
        x = self.spec._from(u)
        v = float(self.fn(x))
        if not math.isfinite(v):
            self.skipped += 1
            return -math.inf
        if v > self.best_v or (v == self.best_v and (self.best_u is None or u < self.best_u)):
            self.best_u, self.best_v = u, v
        return v


def _golden(f, a: float, b: float, iters: int, tol: float) -> None:
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)


def line_search(objective: Callable[[float], float], spec: SearchSpec) -> SearchResult:
    """Grid scan followed by golden-section refinement around the best cell.

    The reported point is the best one evaluated anywhere, so refinement can
    only improve on the grid. Raises :class:`SolverError` if every candidate
    is non-finite.
    """
    track = _Tracker(objective, spec)
    u_lo, u_hi = spec._to(spec.lo), spec._to(spec.hi)
    if u_lo == u_hi:
        track(u_lo)
    else:
        grid = np.linspace(u_lo, u_hi, spec.grid_points)
        values = np.array([track(float(u)) for u in grid])
        if np.isfinite(values).any():
            k = int(np.argmax(values))
            a = float(grid[max(k - 1, 0)])
            b = float(grid[min(k + 1, grid.size - 1)])
            _golden(track, a, b, spec.refine_iters, spec.tol)
    if track.skipped:
        warnings.warn(f"line_search skipped {track.skipped} non-finite evaluations", RuntimeWarning, stacklevel=2)
    if track.best_u is None:
        raise SolverError("objective was non-finite everywhere on the search interval")
    return SearchResult(spec._from(track.best_u), track.best_v)


def grid2d_search(objective: Callable[[float, float], float], spec_x: SearchSpec, spec_y: SearchSpec) -> tuple[tuple[float, float], float]:
    """Nested search: for each ``x`` the inner ``y`` is line-searched."""
    inner: dict[float, float] = {}

    def outer(x: float) -> float:
        res = line_search(lambda y: objective(x, y), spec_y)
        inner[x] = res.x
        return res.value

    best = line_search(outer, spec_x)
    return (best.x, inner[best.x]), best.value


def bisect(
    fn: Callable[[float], float],
    target: float,
    bracket: tuple[float, float],
    tol: float = 1e-10,
    max_iter: int = 400,
    log: bool = False,
    xtol: float = 0.0,
) -> float:
    """Solve ``fn(x) = target`` for monotone ``fn`` on ``bracket``.

    Brent's method does the heavy lifting. The answer is then checked against
    the residual tolerance and polished by plain bisection if needed. With
    ``log=True`` the search runs over ``log(x)``.
    """
    lo, hi = bracket
    if log:
        if lo <= 0:
            raise ValueError("log bisection needs a positive bracket")
        to, back = math.log, math.exp
    else:
        to, back = (lambda v: v), (lambda v: v)

    def g(u: float) -> float:
        return float(fn(back(u))) - target

    a, b = to(lo), to(hi)
    ga, gb = g(a), g(b)
    if not (math.isfinite(ga) and math.isfinite(gb)):
        raise SolverError("function is not finite at the bracket ends")
    if abs(ga) <= tol:
        return back(a)
    if abs(gb) <= tol:
        return back(b)
    if ga * gb > 0:
        raise SolverError(f"target {target!r} is not bracketed by [{fn(lo)!r}, {fn(hi)!r}]")
    root = brentq(g, a, b, xtol=max(xtol, 1e-300), rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    gr = g(root)
    if abs(gr) <= tol:
        return back(root)
    # Residual still large: tighten with bisection from the original bracket.
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        gm = g(mid)
        if abs(gm) <= tol or mid in (a, b):
            return back(mid)
        if (gm > 0) == (ga > 0):
            a, ga = mid, gm
        else:
            b = mid
    raise SolverError(f"bisection did not reach residual {tol:g}")
