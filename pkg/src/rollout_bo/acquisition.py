"""Cost-normalized knowledge gradient and the greedy KG base heuristic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .gp import GpModel
from .optim import BoxBounds, maximize, sobol_points
from .quadrature import QuadratureRule, expect_max_affine, expect_max_affine_columns, gauss_hermite


class BudgetExhausted(RuntimeError):
    """No information source is affordable with the remaining budget."""


@dataclass(frozen=True)
class SourceCost:
    index: int
    cost: float

    def __post_init__(self):
        if not self.cost > 0:
            raise ValueError("source cost must be positive")
        if self.index < 0:
            raise ValueError("source index must be non-negative")


@dataclass(frozen=True)
class Candidate:
    source: int
    x: tuple
    cost: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.ravel(self.x)))
        if not self.cost > 0:
            raise ValueError("candidate cost must be positive")

    @property
    def x_array(self) -> np.ndarray:
        return np.array(self.x)


@dataclass(frozen=True)
class StageReward:
    value: float
    degenerate: bool = False


@dataclass(frozen=True)
class SearchConfig:
    """Settings shared by the greedy heuristic and the rollout search.

    ``candidates`` switches every argmax over ``x`` to an exhaustive scan of a
    finite set (used for discretized problems); otherwise ``x`` is searched
    continuously with :func:`rollout_bo.optim.maximize`. Values within
    ``tie_tol * max(1, |best|)`` of the best count as tied, so ties that are
    exact in real arithmetic survive floating-point round-off.
    """

    eval_grid: np.ndarray
    n_nodes: int = 10
    budget: float = math.inf
    sources: tuple = (SourceCost(0, 1.0),)
    candidates: np.ndarray | None = None
    starts: int = 16
    budget_evals: int = 640
    tie_tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "eval_grid", np.atleast_2d(np.asarray(self.eval_grid, dtype=float)))
        if self.candidates is not None:
            object.__setattr__(self, "candidates", np.atleast_2d(np.asarray(self.candidates, dtype=float)))
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.eval_grid.shape[0] == 0:
            raise ValueError("eval_grid must be non-empty")

    @cached_property
    def rule(self) -> QuadratureRule:
        return gauss_hermite(self.n_nodes)

    def affordable(self, sources=None) -> list:
        sources = self.sources if sources is None else sources
        return sorted((s for s in sources if s.cost <= self.budget), key=lambda s: s.index)


class KGEvaluator:
    """KG stage rewards for one fitted model and evaluation grid.

    Caches the truth posterior mean on the grid and its whitened
    cross-covariances so each candidate costs one small triangular solve.
    """

    def __init__(self, model: GpModel, eval_grid, rule: QuadratureRule):
        self.model = model
        self.rule = rule
        self.grid = np.atleast_2d(np.asarray(eval_grid, dtype=float))
        m = self.grid.shape[0]
        self._zeros = np.zeros(m, dtype=int)
        self.a = model.truth_mean(self.grid)
        self.a_max = float(self.a.max())
        self._Vg = model._whiten(self._zeros, self.grid)

    def slopes(self, source: int, X) -> tuple[np.ndarray, np.ndarray]:
        """Slope matrix (grid x candidates) and per-candidate degeneracy flags."""
        model = self.model
        X = np.atleast_2d(np.asarray(X, dtype=float))
        src = np.full(X.shape[0], int(source))
        model.spec.check_source(int(source))
        s2 = model.y_scale ** 2
        cov = model.spec.latent_cov(self._zeros, self.grid, src, X)
        var = model.spec.latent_var(src, X)
        prior = var * s2
        if len(model.data):
            Vc = model._whiten(src, X)
            cov = cov - self._Vg.T @ Vc
            var = var - np.sum(Vc * Vc, axis=0)
        den = model.noise_variance(source) + np.maximum(var, 0.0) * s2
        degenerate = ~(den > 1e-14 * prior)
        B = cov * s2 / np.sqrt(np.where(degenerate, 1.0, den))
        B[:, degenerate] = 0.0
        return B, degenerate

    def reward(self, cand: Candidate) -> StageReward:
        B, deg = self.slopes(cand.source, np.array([cand.x]))
        b = B[:, 0]
        if deg[0] or not np.any(b):
            return StageReward(0.0, True)
        gain = expect_max_affine(self.a, b, self.rule) - self.a_max
        return StageReward(max(gain / cand.cost, 0.0), False)

    def scan(self, source: int, X, cost: float) -> np.ndarray:
        """Vectorized rewards for many candidate inputs of one source."""
        B, _ = self.slopes(source, X)
        gain = expect_max_affine_columns(self.a, B, self.rule) - self.a_max
        return np.maximum(gain / cost, 0.0)


def kg_stage_reward(model: GpModel, cand: Candidate, eval_grid, rule: QuadratureRule) -> StageReward:
    """Expected gain in the maximum truth posterior mean per unit cost."""
    eval_grid = np.atleast_2d(np.asarray(eval_grid, dtype=float))
    if eval_grid.shape[0] == 0:
        raise ValueError("eval_grid must be non-empty")
    return KGEvaluator(model, eval_grid, rule).reward(cand)


def tie_floor(top: float, tie_tol: float) -> float:
    return top - tie_tol * max(1.0, abs(top))


def pick_best(entries: Sequence[tuple[float, Candidate]], tie_tol: float = 1e-12) -> tuple[float, Candidate]:
    """Largest value; ties go to the cheapest source, then the smallest ``x``."""
    if not entries:
        raise ValueError("no candidates to choose from")
    top = max(v for v, _ in entries)
    tied = [(v, c) for v, c in entries if v >= tie_floor(top, tie_tol)]
    return min(tied, key=lambda e: (e[1].cost, e[1].x, e[1].source))


def top_distinct(values: np.ndarray, X: np.ndarray, k: int) -> list:
    order = sorted(range(len(values)), key=lambda j: (-values[j], tuple(X[j])))
    return [X[j] for j in order[:k]]


def search_source(objective, scan_values: np.ndarray | None, source: SourceCost, bounds: BoxBounds,
                  config: SearchConfig, starts: int, budget_evals: int, rng_seed) -> list:
    """Maximize ``objective(Candidate)`` over ``x`` for one source.

    Returns ``(value, Candidate)`` pairs: every point for a finite candidate
    set, the optimizer's best point otherwise (started from the highest
    ``scan_values`` grid points).
    """
    if config.candidates is not None:
        out = []
        for x in config.candidates:
            c = Candidate(source.index, x, source.cost)
            out.append((objective(c), c))
        return out
    inits = None
    if scan_values is not None:
        inits = top_distinct(scan_values, config.eval_grid, starts)
    rep = maximize(lambda x: objective(Candidate(source.index, x, source.cost)), bounds,
                   starts=starts, budget_evals=max(budget_evals, starts), rng_seed=rng_seed,
                   initial_points=inits)
    c = Candidate(source.index, rep.best_x, source.cost)
    return [(objective(c), c)]


def greedy_kg_search(model: GpModel, sources, bounds: BoxBounds, config: SearchConfig,
                     rng_seed=0) -> tuple[Candidate, StageReward]:
    """Greedy KG choice and its stage reward."""
    affordable = config.affordable(sources)
    if not affordable:
        raise BudgetExhausted(f"no source affordable with budget {config.budget}")
    ev = KGEvaluator(model, config.eval_grid, config.rule)
    entries = []
    for s in affordable:
        scan = None if config.candidates is not None else ev.scan(s.index, config.eval_grid, s.cost)
        entries += search_source(lambda c: ev.reward(c).value, scan, s, bounds, config,
                                 config.starts, config.budget_evals, rng_seed)
    _, cand = pick_best(entries, config.tie_tol)
    return cand, ev.reward(cand)


def greedy_kg_select(model: GpModel, sources, bounds: BoxBounds, config: SearchConfig,
                     rng_seed=0) -> Candidate:
    return greedy_kg_search(model, sources, bounds, config, rng_seed)[0]


def acquisition_grid(model: GpModel, bounds: BoxBounds, rng_seed=0, per_dim: int = 100) -> np.ndarray:
    """Evaluation grid for the inner max: Sobol points, observed inputs and the incumbent."""
    pts = bounds.from_unit(sobol_points(per_dim * bounds.dim, bounds.dim, rng_seed))
    observed = np.unique(model.data.X, axis=0) if len(model.data) else np.zeros((0, bounds.dim))
    grid = np.vstack([pts, observed])
    means = model.truth_mean(grid)
    inits = top_distinct(means, grid, 4)
    rep = maximize(lambda x: float(model.truth_mean(x)[0]), bounds, starts=4, budget_evals=200,
                   rng_seed=rng_seed, initial_points=inits)
    return np.vstack([grid, rep.best_x[None, :]])
