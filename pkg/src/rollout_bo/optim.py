"""Bound-constrained derivative-free maximization.

Multistart Nelder-Mead in the unit-scaled box. Starts come from caller
supplied points first, then from a seeded scrambled Sobol sequence, so the
first ``m`` starts of a run with more starts are the same ``m`` starts.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_unit(self, x) -> np.ndarray:
        w = np.where(self.width > 0, self.width, 1.0)
        return (np.asarray(x, dtype=float) - self.lower) / w

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def __eq__(self, other):
        if not isinstance(other, BoxBounds):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    @classmethod
    def unit(cls, dim: int) -> "BoxBounds":
        return cls(np.zeros(dim), np.ones(dim))


@dataclass(frozen=True)
class OptimReport:
    best_x: np.ndarray
    best_value: float
    evaluations: int
    starts_used: int


def sobol_points(n: int, dim: int, seed) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence in the unit cube."""
    if n <= 0:
        return np.empty((0, dim))
    m = max(0, math.ceil(math.log2(n)))
    sampler = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(seed))
    return sampler.random_base2(m)[:n]


def _lex_key(value: float, x: np.ndarray):
    return (-value, tuple(x.tolist()))


def maximize(
    objective: Callable[[np.ndarray], float],
    bounds: BoxBounds,
    starts: int = 8,
    budget_evals: int = 800,
    rng_seed=0,
    initial_points: Sequence | None = None,
    xatol: float = 1e-7,
    fatol: float = 1e-12,
) -> OptimReport:
    """Maximize ``objective`` over ``bounds`` with multistart Nelder-Mead.

    ``budget_evals`` is split evenly over the starts. Points given in
    ``initial_points`` are used as the first starts (clipped into the box);
    the remainder are scrambled Sobol points. Ties between starts are broken
    by the lexicographically smallest point. Non-finite objective values at a
    start point skip that start.
    """
    if starts < 1:
        raise ValueError("starts must be positive")
    if budget_evals < starts:
        raise ValueError("budget_evals must be at least starts")
    d = bounds.dim
    per_start = budget_evals // starts
    evaluations = 0

    def f_unit(u: np.ndarray) -> float:
        nonlocal evaluations
        x = bounds.from_unit(np.clip(u, 0.0, 1.0))
        x = bounds.clip(x)
        evaluations += 1
        val = float(objective(x))
        return val if math.isfinite(val) else -math.inf

    given = [] if initial_points is None else [bounds.to_unit(bounds.clip(p)) for p in initial_points]
    given = [np.clip(np.asarray(u, dtype=float).reshape(d), 0.0, 1.0) for u in given][:starts]
    extra = sobol_points(starts - len(given), d, rng_seed)
    start_pts = given + [row for row in extra]

    best: tuple | None = None
    used = 0
    for u0 in start_pts:
        v0 = f_unit(u0)
        if not math.isfinite(v0):
            continue
        used += 1
        cand_u, cand_v = u0, v0
        if per_start > 1 and d > 0:
            # initial simplex stepping toward the interior keeps vertices feasible
            step = np.where(u0 <= 0.5, 0.1, -0.1)
            simplex = np.vstack([u0] + [u0 + step[j] * np.eye(d)[j] for j in range(d)])
            cache = {}

            def neg(u):
                key = u.tobytes()
                if key not in cache:
                    cache[key] = -f_unit(u)
                return cache[key]

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(
                    neg,
                    u0,
                    method="Nelder-Mead",
                    bounds=[(0.0, 1.0)] * d,
                    options={
                        "maxfev": per_start - 1,
                        "initial_simplex": simplex,
                        "xatol": xatol,
                        "fatol": fatol,
                    },
                )
            ru = np.clip(res.x, 0.0, 1.0)
            rv = -float(res.fun)
            if math.isfinite(rv) and rv > cand_v:
                cand_u, cand_v = ru, rv
        x = bounds.clip(bounds.from_unit(cand_u))
        key = _lex_key(cand_v, x)
        if best is None or key < best[0]:
            best = (key, x, cand_v)

    if best is None:
        raise OptimizationError("objective was non-finite at every start point")
    return OptimReport(best_x=best[1], best_value=float(best[2]), evaluations=evaluations, starts_used=used)
