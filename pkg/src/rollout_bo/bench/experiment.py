"""Experiment loop for single- and multi-source non-myopic BO."""
from __future__ import annotations

import hashlib
import json
import math
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from ..acquisition import SourceCost, acquisition_grid, greedy_kg_search, kg_stage_reward
from ..design import fill_grid, minimax_design
from ..gp import Dataset, GpModel, default_spec, fit_mle
from ..horizon import ErrorBoundParams, PhiMode, error_bound, feasible_horizon, profit
from ..rollout import RolloutConfig, end_stage_report, select_next
from ..sources import BiasedSourceSpec, ObjectiveSpec, evaluate_source


def parse_mode(text: str) -> tuple[str, int | None]:
    """``adaptive``, ``greedy`` or ``fixed:<h>``."""
    text = str(text).strip().lower()
    if text in ("adaptive", "greedy"):
        return text, None
    if text.startswith("fixed:"):
        return "fixed", int(text.split(":", 1)[1])
    raise ValueError(f"unknown horizon mode {text!r}; use adaptive, greedy or fixed:<h>")


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str = "BraninHoo"
    sources: tuple = ()
    alpha: float = 0.9
    h_bar: int = 5
    n_nodes: int = 10
    n_initial: int = 9
    budget: float | None = None
    cost_truth: float | None = None
    N: int | None = None
    horizon_mode: str = "adaptive"
    phi_mode: str = "kg_proxy"
    error_bound: ErrorBoundParams = field(default_factory=ErrorBoundParams)
    e_bar_override: float | None = None
    replicates: int = 10
    base_seed: int = 0
    noise_sd: float = 0.1
    kernel_p: int = 2
    mle_restarts: int = 8
    grid_per_dim: int = 100
    acq_starts: int = 16
    acq_evals: int = 640
    rollout_starts: int = 4
    rollout_evals: int = 32
    deep_nodes: int | None = 3
    candidate_grid: int | None = None

    def __post_init__(self):
        srcs = tuple(s if isinstance(s, BiasedSourceSpec) else BiasedSourceSpec(**s) for s in self.sources)
        object.__setattr__(self, "sources", srcs)
        if isinstance(self.error_bound, dict):
            object.__setattr__(self, "error_bound", ErrorBoundParams(**self.error_bound))
        ObjectiveSpec(self.objective, self.noise_sd)
        mode, h = parse_mode(self.horizon_mode)
        PhiMode.parse(self.phi_mode)
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.h_bar < 2:
            raise ValueError("h_bar must be at least 2")
        if mode == "fixed" and not 1 <= h <= self.h_bar:
            raise ValueError(f"fixed horizon {h} outside 1..h_bar={self.h_bar}")
        if self.n_initial < 1:
            raise ValueError("n_initial must be positive")
        if self.mle_restarts < 0:
            raise ValueError("mle_restarts must be non-negative (0 keeps the default hyperparameters)")
        if self.candidate_grid is not None and self.candidate_grid < 2:
            raise ValueError("candidate_grid needs at least 2 points per axis")

    # -- derived settings ----------------------------------------------------
    @property
    def objective_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.objective, self.noise_sd)

    @property
    def dim(self) -> int:
        return self.objective_spec.dim

    @property
    def n_evaluations(self) -> int:
        return 10 * self.dim if self.N is None else int(self.N)

    @property
    def source_costs(self) -> tuple:
        d = self.dim
        truth = 5.0 * d if self.cost_truth is None else float(self.cost_truth)
        return (SourceCost(0, truth),) + tuple(SourceCost(i, s.cost) for i, s in enumerate(self.sources, 1))

    @property
    def initial_budget(self) -> float:
        if self.budget is not None:
            return float(self.budget)
        if self.sources:
            return 10.0 * self.dim ** 2
        return self.n_evaluations * self.source_costs[0].cost

    # -- (de)serialization ---------------------------------------------------
    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "sources":
                v = [asdict(s) for s in v]
            elif f.name == "error_bound":
                v = asdict(v)
            out[f.name] = v
        return out

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "sources" in data:
            dim = ObjectiveSpec(data.get("objective", cls.objective)).dim
            data["sources"] = tuple(
                s if isinstance(s, BiasedSourceSpec) else BiasedSourceSpec(**{"cost": float(dim), **s})
                for s in (data["sources"] or ())
            )
        return cls(**data)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_mapping(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class StageTrace:
    k: int
    h: int
    source: int
    x: tuple
    y: float
    kg: float
    e_bar: float
    cost: float
    budget: float
    incumbent: float


@dataclass
class ExperimentResult:
    gap: float
    trace: list
    horizon_histogram: dict
    seed: int
    fingerprint: str
    runtime: float
    f_init: float
    f_final: float
    f_star: float
    initial_budget: float
    end_stage_x: tuple
    end_stage_value: float
    initial: list = field(default_factory=list)
    config: ExperimentConfig | None = None

    def record(self) -> dict:
        """Deterministic summary (no wall-clock fields)."""
        return {
            "gap": self.gap,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "horizon_histogram": {str(k): v for k, v in sorted(self.horizon_histogram.items())},
            "f_init": self.f_init,
            "f_final": self.f_final,
            "f_star": self.f_star,
            "initial_budget": self.initial_budget,
            "end_stage_x": list(self.end_stage_x),
            "end_stage_value": self.end_stage_value,
            "n_stages": len(self.trace),
        }


def gap(f_init: float, f_final: float, f_star: float) -> float:
    """Fraction of the initial shortfall ``f_star - f_init`` closed by ``f_final``."""
    if f_star < f_init:
        raise ValueError(f"global maximum {f_star} is below the initial value {f_init}")
    if f_star == f_init:
        return 1.0
    return (f_init - f_final) / (f_init - f_star) + 0.0  # no negative zero


def replicate_seed(base_seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(replicate)]).generate_state(1)[0])


def _substreams(seed: int) -> dict:
    names = ("design", "noise", "fit", "search")
    kids = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}


def _fit(spec, data, restarts, seed):
    if restarts == 0:
        return GpModel(spec, data)
    return fit_mle(spec, data, restarts, seed)


def run_experiment(config: ExperimentConfig, seed: int) -> ExperimentResult:
    """One replicate of the non-myopic BO loop.

    The incumbent is the best noise-free objective value among truth-source
    observations; ``end_stage_x`` (the posterior-mean maximizer after the last
    fit) is reported separately.
    """
    t0 = time.perf_counter()
    obj = config.objective_spec
    bounds = obj.bounds
    srcs = config.source_costs
    budget = config.initial_budget
    n_eval = config.n_evaluations
    if budget < min(s.cost for s in srcs) and n_eval > 0:
        raise ValueError(f"budget {budget} cannot pay for any evaluation")
    mode, fixed_h = parse_mode(config.horizon_mode)
    phi_mode = PhiMode.parse(config.phi_mode)
    e_override = math.inf if mode == "greedy" else config.e_bar_override
    streams = _substreams(seed)
    noise_rng = np.random.default_rng(streams["noise"])

    X0 = minimax_design(config.n_initial, bounds, streams["design"])
    rows_s, rows_x, rows_y, fvals = [], [], [], []
    for i in range(len(srcs)):
        for x in X0:
            rows_s.append(i)
            rows_x.append(x)
            rows_y.append(evaluate_source(config.sources, obj, i, x, noise_rng))
            if i == 0:
                fvals.append(obj.value(x))
    data = Dataset(bounds, rows_s, rows_x, rows_y)
    spec0 = default_spec(obj.dim, n_bias=len(config.sources), p=config.kernel_p, bounds=bounds)
    model = _fit(spec0, data, config.mle_restarts, streams["fit"])
    initial = [(s, tuple(float(v) for v in x), float(y)) for s, x, y in zip(rows_s, rows_x, rows_y)]
    fixed_grid = None if config.candidate_grid is None else fill_grid(bounds, config.candidate_grid)
    f_init = max(fvals)
    incumbent = f_init

    trace = []
    hist = Counter()
    for k in range(1, n_eval + 1):
        affordable = [s for s in srcs if s.cost <= budget]
        if not affordable:
            break
        stage_seed = streams["search"] + k
        if fixed_grid is None:
            grid = acquisition_grid(model, bounds, stage_seed, config.grid_per_dim)
        else:
            grid = fixed_grid
        n_left = n_eval - k + 1
        cfg = RolloutConfig(
            eval_grid=grid, n_nodes=config.n_nodes, budget=budget, sources=srcs,
            starts=config.acq_starts, budget_evals=config.acq_evals, alpha=config.alpha,
            h_bar=config.h_bar, N=n_left, deep_nodes=config.deep_nodes,
            rollout_starts=config.rollout_starts, rollout_evals=config.rollout_evals,
            candidates=fixed_grid,
        )
        greedy_cand, greedy_reward = greedy_kg_search(model, srcs, bounds, cfg, stage_seed)

        if e_override is not None:
            e_bar = float(e_override)
        else:
            e_bar = error_bound(config.error_bound, model, grid)
        if mode == "fixed":
            h = fixed_h
        elif n_left <= 1:
            h = 1
        else:
            phi = profit(phi_mode, k, model, greedy_kg_value=greedy_reward.value)
            h = feasible_horizon(phi, e_bar, config.alpha, n_left - 1, config.h_bar).h

        if min(h, n_left) <= 1 or config.alpha == 0.0:
            cand, kg_value = greedy_cand, greedy_reward.value
        else:
            cand = select_next(model, srcs, bounds, h, cfg, stage_seed)
            kg_value = kg_stage_reward(model, cand, grid, cfg.rule).value

        x = cand.x_array
        y = evaluate_source(config.sources, obj, cand.source, x, noise_rng)
        budget -= cand.cost
        data = data.append(cand.source, x, y)
        if cand.source == 0:
            fvals.append(obj.value(x))
            incumbent = max(incumbent, fvals[-1])
        model = _fit(model.spec, data, config.mle_restarts, streams["fit"] + k)
        hist[h] += 1
        trace.append(StageTrace(k, h, cand.source, cand.x, float(y), float(kg_value), e_bar,
                                cand.cost, budget, incumbent))

    x_end = end_stage_report(model, bounds, streams["search"])
    return ExperimentResult(
        gap=gap(f_init, incumbent, obj.known_max),
        trace=trace,
        horizon_histogram=dict(hist),
        seed=int(seed),
        fingerprint=config.fingerprint(),
        runtime=time.perf_counter() - t0,
        f_init=f_init,
        f_final=incumbent,
        f_star=obj.known_max,
        initial_budget=config.initial_budget,
        end_stage_x=tuple(float(v) for v in x_end),
        end_stage_value=obj.value(x_end),
        initial=initial,
        config=config,
    )


def run_replicates(config: ExperimentConfig, jobs: int = 1) -> list:
    seeds = [replicate_seed(config.base_seed, r) for r in range(config.replicates)]
    if jobs <= 1:
        return [run_experiment(config, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, [config] * len(seeds), seeds))


@dataclass(frozen=True)
class Summary:
    mean_gap: float
    median_gap: float
    horizon_frequency: dict
    rows: list


def aggregate(results: Sequence[ExperimentResult]) -> Summary:
    if not results:
        raise ValueError("nothing to aggregate")
    gaps = [r.gap for r in results]
    freq = Counter()
    for r in results:
        freq.update(r.horizon_histogram)
    rows = [dict(r.record(), runtime=r.runtime) for r in results]
    return Summary(statistics.fmean(gaps), statistics.median(gaps), dict(sorted(freq.items())), rows)
