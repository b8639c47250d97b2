"""Rollout approximation of the lookahead Bellman recursion with greedy KG as base policy.

Simulation runs on a finite Gaussian belief: the joint posterior of the
truth surface on the evaluation grid, of every source on the candidate
inputs, and of the candidate under study. A fantasy observation at quadrature
node ``z`` moves the belief by one rank-1 update, so hyperparameters stay
frozen at the entry model throughout the lookahead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .acquisition import (
    BudgetExhausted,
    Candidate,
    KGEvaluator,
    SearchConfig,
    greedy_kg_select,
    kg_stage_reward,
    pick_best,
    search_source,
    tie_floor,
    top_distinct,
)
from .gp import GpModel
from .optim import BoxBounds, maximize, sobol_points
from .quadrature import QuadratureRule, expect_max_affine_columns, gauss_hermite


@dataclass(frozen=True)
class RolloutConfig(SearchConfig):
    """Search settings plus the lookahead parameters.

    ``N`` is the number of evaluations left including the current one, and
    ``budget`` the remaining budget. Fantasies of the first simulated
    outcome use ``n_nodes`` points; deeper ones use a ``deep_nodes`` rule
    (``None`` keeps ``n_nodes`` everywhere).
    """

    alpha: float = 0.9
    h_bar: int = 5
    N: int = 1
    deep_nodes: int | None = 3
    rollout_starts: int = 4
    rollout_evals: int = 32

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.h_bar < 1 or self.N < 1:
            raise ValueError("h_bar and N must be positive")

    @cached_property
    def deep_rule(self) -> QuadratureRule:
        return self.rule if self.deep_nodes is None else gauss_hermite(self.deep_nodes)


@dataclass(frozen=True)
class RolloutValue:
    q_value: float
    horizon_used: int
    sim_paths: int


class _Belief:
    """Joint Gaussian over a finite list of sites; immutable."""

    __slots__ = ("mean", "cov", "noise")

    def __init__(self, mean, cov, noise):
        self.mean = mean
        self.cov = cov
        self.noise = noise

    def condition(self, site: int, z: float) -> "_Belief":
        den = self.noise[site] + max(self.cov[site, site], 0.0)
        if not den > 0:
            return self
        col = self.cov[:, site]
        mean = self.mean + col * (z / math.sqrt(den))
        cov = self.cov - np.outer(col, col) / den
        return _Belief(mean, cov, self.noise)


class _RolloutEngine:
    """Shared belief and heuristic for all candidates scored on one model."""

    def __init__(self, model: GpModel, config: RolloutConfig):
        self.model = model
        self.config = config
        self.kg = KGEvaluator(model, config.eval_grid, config.rule)
        grid = config.eval_grid
        cand_X = grid if config.candidates is None else config.candidates
        self.cand_X = cand_X
        m, c = grid.shape[0], cand_X.shape[0]
        sources = [np.zeros(m, dtype=int)]
        X = [grid]
        self.blocks = []
        offset = m
        for s in config.sources:
            if s.index == 0 and config.candidates is None:
                # truth candidates coincide with the evaluation sites
                self.blocks.append((s, np.arange(m)))
                continue
            sources.append(np.full(c, s.index))
            X.append(cand_X)
            self.blocks.append((s, np.arange(offset, offset + c)))
            offset += c
        self.site_src = np.concatenate(sources)
        self.site_X = np.vstack(X)
        self.eval_idx = np.arange(m)
        self.base_mean = model.mean(self.site_src, self.site_X)
        self.base_cov = model.posterior_cov(self.site_src, self.site_X, self.site_src, self.site_X)
        self.base_noise = np.array([model.noise_variance(int(s)) for s in self.site_src])
        # lexicographic order of candidate inputs, for tie-breaking inside simulations
        self.x_rank = np.empty(c, dtype=int)
        self.x_rank[np.lexsort(cand_X.T[::-1])] = np.arange(c)

    def belief_with(self, cand: Candidate) -> tuple[_Belief, int]:
        model = self.model
        x = np.array([cand.x])
        cross = model.posterior_cov(self.site_src, self.site_X, [cand.source], x)[:, 0]
        _, var = model.posterior_batch([cand.source], x)
        n = self.site_src.size
        cov = np.empty((n + 1, n + 1))
        cov[:n, :n] = self.base_cov
        cov[:n, n] = cross
        cov[n, :n] = cross
        cov[n, n] = var[0]
        mean = np.append(self.base_mean, model.mean([cand.source], x)[0])
        noise = np.append(self.base_noise, model.noise_variance(cand.source))
        return _Belief(mean, cov, noise), n

    def heuristic(self, belief: _Belief, budget: float):
        """Greedy KG over the candidate sites: (site, reward, cost) or ``None``."""
        a = belief.mean[self.eval_idx]
        a_max = a.max()
        rows = []
        for s, idx in self.blocks:
            if s.cost > budget:
                continue
            den = belief.noise[idx] + np.maximum(np.diag(belief.cov)[idx], 0.0)
            prior = self.model.spec.latent_var(np.full(idx.size, s.index), self.cand_X) * self.model.y_scale ** 2
            degenerate = ~(den > 1e-14 * prior)
            B = belief.cov[np.ix_(self.eval_idx, idx)] / np.sqrt(np.where(degenerate, 1.0, den))
            B[:, degenerate] = 0.0
            vals = np.maximum((expect_max_affine_columns(a, B, self.config.rule) - a_max) / s.cost, 0.0)
            vals[degenerate] = 0.0
            rows.append((vals, s, idx))
        if not rows:
            return None
        top = max(float(v.max()) for v, _, _ in rows)
        best = None
        for vals, s, idx in rows:
            tied = np.flatnonzero(vals >= tie_floor(top, self.config.tie_tol))
            if tied.size == 0:
                continue
            j = tied[np.argmin(self.x_rank[tied])]
            key = (s.cost, int(self.x_rank[j]), s.index)
            if best is None or key < best[0]:
                best = (key, int(idx[j]), float(vals[j]), s.cost)
        return best[1], best[2], best[3]

    def tail(self, belief: _Belief, depth: int, depth_cap: int, budget: float) -> tuple[float, int]:
        """Discounted heuristic reward from simulated stage ``depth`` onward."""
        pick = self.heuristic(belief, budget)
        if pick is None:
            return 0.0, 1
        site, reward, cost = pick
        if depth >= depth_cap:
            return reward, 1
        rule = self.config.deep_rule
        acc, paths = 0.0, 0
        for z, w in zip(rule.nodes, rule.weights):
            v, p = self.tail(belief.condition(site, z), depth + 1, depth_cap, budget - cost)
            acc += w * v
            paths += p
        return reward + self.config.alpha * acc, paths

    def value(self, cand: Candidate, h: int) -> RolloutValue:
        cfg = self.config
        r0 = self.kg.reward(cand).value
        depth_cap = min(h, cfg.N)
        if depth_cap <= 1 or cfg.alpha == 0.0:
            return RolloutValue(r0, 1, 0)
        belief, site = self.belief_with(cand)
        acc, paths = 0.0, 0
        for z, w in zip(cfg.rule.nodes, cfg.rule.weights):
            v, p = self.tail(belief.condition(site, z), 2, depth_cap, cfg.budget - cand.cost)
            acc += w * v
            paths += p
        return RolloutValue(float(r0 + cfg.alpha * acc), depth_cap, paths)


def rollout_value(model: GpModel, cand: Candidate, h: int, config: RolloutConfig, rng_seed=0) -> RolloutValue:
    """Rollout estimate of ``Q_k`` for one candidate.

    The immediate term is the KG stage reward; the lookahead integrates the
    candidate's outcome over quadrature nodes and follows greedy KG on the
    grid for up to ``min(h, N)`` stages in total, discounting by ``alpha``
    per stage and stopping early when the simulated budget runs out.
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    if cand.cost > config.budget:
        raise BudgetExhausted("candidate is not affordable")
    return _RolloutEngine(model, config).value(cand, h)


def select_next(model: GpModel, sources, bounds: BoxBounds, h: int, config: RolloutConfig,
                rng_seed=0) -> Candidate:
    """Maximize the rollout value over affordable sources and inputs."""
    config = replace(config, sources=tuple(sources))
    if min(h, config.N) <= 1 or config.alpha == 0.0:
        # rollout value reduces to the KG stage reward exactly
        return greedy_kg_select(model, sources, bounds, config, rng_seed)
    affordable = config.affordable()
    if not affordable:
        raise BudgetExhausted(f"no source affordable with budget {config.budget}")
    engine = _RolloutEngine(model, config)
    entries = []
    for s in affordable:
        scan = None
        if config.candidates is None:
            scan = engine.kg.scan(s.index, config.eval_grid, s.cost)
        entries += search_source(lambda c: engine.value(c, h).q_value, scan, s, bounds, config,
                                 config.rollout_starts, config.rollout_evals, rng_seed)
    return pick_best(entries, config.tie_tol)[1]


def end_stage_report(model: GpModel, bounds: BoxBounds, rng_seed=0, starts: int = 8,
                     budget_evals: int = 800) -> np.ndarray:
    """Maximizer of the truth posterior mean."""
    pts = bounds.from_unit(sobol_points(64 * bounds.dim, bounds.dim, rng_seed))
    if len(model.data):
        pts = np.vstack([pts, model.data.X])
    inits = top_distinct(model.truth_mean(pts), pts, starts)
    rep = maximize(lambda x: float(model.truth_mean(x)[0]), bounds, starts=starts,
                   budget_evals=budget_evals, rng_seed=rng_seed, initial_points=inits)
    return rep.best_x


Policy = Callable[[GpModel, int, float], Candidate]


def policy_value(model: GpModel, policy: Policy, n_remaining: int, config: SearchConfig,
                 alpha: float, budget: float | None = None, rule: QuadratureRule | None = None) -> float:
    """Expected discounted KG reward of following ``policy`` for ``n_remaining`` stages.

    Enumerates the full outcome tree, refitting the posterior (fixed
    hyperparameters) on every fantasy dataset; the outcome at each stage is
    integrated with ``rule`` (default: the config's rule). ``policy`` maps
    ``(model, n_remaining, budget)`` to a candidate.
    """
    rule = config.rule if rule is None else rule
    budget = config.budget if budget is None else budget
    if n_remaining <= 0 or not any(s.cost <= budget for s in config.sources):
        return 0.0
    cand = policy(model, n_remaining, budget)
    r = kg_stage_reward(model, cand, config.eval_grid, config.rule).value
    if n_remaining == 1 or alpha == 0.0:
        return r
    m, v = model.posterior(cand.source, cand.x)
    sd = math.sqrt(v + model.noise_variance(cand.source))
    acc = 0.0
    for z, w in zip(rule.nodes, rule.weights):
        child = model.condition(cand.source, cand.x, m + sd * z) if sd > 0 else model
        acc += w * policy_value(child, policy, n_remaining - 1, config, alpha, budget - cand.cost, rule)
    return r + alpha * acc


def greedy_policy(bounds: BoxBounds, config: SearchConfig, rng_seed=0) -> Policy:
    def policy(model, n_remaining, budget):
        return greedy_kg_select(model, config.sources, bounds, replace(config, budget=budget), rng_seed)
    return policy


def rollout_policy(bounds: BoxBounds, config: RolloutConfig, h: int | None = None, rng_seed=0) -> Policy:
    """Rollout policy; ``h=None`` looks ahead over all remaining stages."""
    def policy(model, n_remaining, budget):
        cfg = replace(config, budget=budget, N=n_remaining)
        return select_next(model, cfg.sources, bounds, n_remaining if h is None else h, cfg, rng_seed)
    return policy
