"""Acceptance suite: one test (and one PASS/FAIL line) per criterion.

Criteria 5-7 share a module-level cache of Branin-Hoo runs on paired seeds;
they are marked slow (roughly 45 minutes on one core, dominated by FIXED(5)).
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import factorial2

from _oracles import dense_posterior, hermite_rule
from rollout_bo.acquisition import SourceCost, greedy_kg_select
from rollout_bo.bench import ExperimentConfig, aggregate, run_experiment
from rollout_bo.bench.experiment import replicate_seed
from rollout_bo.bench.persist import check_run, load_runs, write_result
from rollout_bo.gp import Dataset, GpModel, KernelSpec, SourceModelSpec, default_spec, posterior, sigma_tilde
from rollout_bo.horizon import feasible_horizon
from rollout_bo.optim import BoxBounds
from rollout_bo.quadrature import gauss_hermite
from rollout_bo.rollout import RolloutConfig, greedy_policy, policy_value, rollout_policy, select_next

UNIT = BoxBounds.unit(1)


# -- 1: rollout improves on its base heuristic ----------------------------------

def micro_instance(seed):
    rng = np.random.default_rng(1000 + seed)
    n_cands = int(rng.integers(5, 10))
    N = int(rng.choice([2, 3]))
    n_nodes = int(rng.choice([3, 5]))
    k0 = KernelSpec((float(rng.uniform(0.15, 0.5)),), 1.0, float(rng.choice([1e-3, 1e-2, 0.1])),
                    "matern", int(rng.integers(0, 3)))
    two_sources = seed % 4 == 3
    bias = (KernelSpec((float(rng.uniform(0.2, 0.6)),), 0.3, 1e-2),) if two_sources else ()
    nd = int(rng.integers(1, 4))
    src = rng.integers(0, 1 + len(bias), nd)
    src[0] = 0
    model = GpModel(SourceModelSpec(k0, bias), Dataset(UNIT, src, rng.uniform(0, 1, (nd, 1)), rng.normal(size=nd)),
                    standardize=False)
    cands = np.sort(rng.uniform(0, 1, n_cands))[:, None]
    sources = (SourceCost(0, 2.0), SourceCost(1, 1.0)) if two_sources else (SourceCost(0, 1.0),)
    budget = 2.0 * N if two_sources else math.inf
    cfg = RolloutConfig(eval_grid=cands, candidates=cands, n_nodes=n_nodes, deep_nodes=None, N=N, alpha=0.9,
                        sources=sources, budget=budget, h_bar=5)
    return model, cfg


def test_criterion_1_rollout_improving(verdict):
    t0 = time.perf_counter()
    worse, strict, n = [], 0, 24
    for seed in range(n):
        model, cfg = micro_instance(seed)
        v_roll = policy_value(model, rollout_policy(UNIT, cfg), cfg.N, cfg, cfg.alpha)
        v_greedy = policy_value(model, greedy_policy(UNIT, cfg), cfg.N, cfg, cfg.alpha)
        if not v_roll >= v_greedy:
            worse.append((seed, v_roll - v_greedy))
        strict += v_roll > v_greedy
    elapsed = time.perf_counter() - t0
    ok = not worse and elapsed < 120
    verdict(1, ok, f"{n} micro-instances, rollout >= greedy in all but {len(worse)} "
                   f"(strictly better in {strict}), {elapsed:.1f}s")
    assert not worse, worse
    assert elapsed < 120


# -- 2: reduction identities -----------------------------------------------------

def reduction_stage(seed):
    rng = np.random.default_rng(seed)
    b = BoxBounds([-1, 0], [1, 2])
    n_bias = seed % 2
    X = b.from_unit(rng.uniform(size=(5, 2)))
    src = np.zeros(5, int)
    src[3:] = n_bias
    data = Dataset(b, src, X, np.sin(3 * X[:, 0]) + X[:, 1] + 0.1 * src)
    model = GpModel(default_spec(2, n_bias=n_bias, bounds=b), data)
    sources = (SourceCost(0, 2.0), SourceCost(1, 1.0)) if n_bias else (SourceCost(0, 1.0),)
    grid = b.from_unit(rng.uniform(size=(60, 2)))
    cfg = RolloutConfig(eval_grid=grid, N=4, starts=4, budget_evals=80, sources=sources, budget=10.0)
    return model, b, cfg


def test_criterion_2_reduction_identities(verdict):
    mismatches = []
    for seed in range(50):
        model, b, cfg = reduction_stage(seed)
        g = greedy_kg_select(model, cfg.sources, b, cfg, rng_seed=seed)
        h1 = select_next(model, cfg.sources, b, 1, cfg, rng_seed=seed)
        a0 = select_next(model, cfg.sources, b, 3, replace(cfg, alpha=0.0), rng_seed=seed)
        if not (h1 == g and a0 == g):
            mismatches.append(seed)
    verdict(2, not mismatches, f"50 seeded stages, h=1 and alpha=0 identical to greedy "
                               f"({len(mismatches)} mismatches)")
    assert not mismatches


# -- 3: rolling horizon rule ---------------------------------------------------

def brute_force_horizon(phi, e_bar, alpha, n_minus_k, h_bar):
    rhs = e_bar * sum(alpha ** i for i in range(n_minus_k))
    for j in range(2, h_bar + 1):
        if sum(alpha ** (i - 2) * phi(i) for i in range(2, j + 1)) > rhs:
            return j
    return 1


def test_criterion_3_horizon_rule(verdict):
    rhs = 0.5 * (1 - 0.9 ** 10) / 0.1
    direct = next(j for j in range(2, 20) if (1 - 0.9 ** (j - 1)) / 0.1 > rhs)
    worked = feasible_horizon(lambda j: 1.0, 0.5, 0.9, 10, 5).h
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(100):
        phi2, e_bar = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
        n_minus_k, h_bar = int(rng.integers(1, 15)), int(rng.integers(2, 8))
        h = feasible_horizon(lambda j: phi2, e_bar, 0.0, n_minus_k, h_bar).h
        expected = brute_force_horizon(lambda j: phi2, e_bar, 0.0, n_minus_k, h_bar)
        bad += h != expected or (h == 2) != (phi2 > e_bar)
    ok = direct == 5 and worked == 5 and bad == 0
    verdict(3, ok, f"worked example j={worked} (direct evaluation {direct}); alpha->0 draws: {bad}/100 disagree")
    assert ok


# -- 4: numerics ----------------------------------------------------------------

def random_gp(rng, dim, n_sources):
    fam = str(rng.choice(["matern", "rbf"]))
    p = int(rng.integers(0, 3))

    def kern():
        return KernelSpec(tuple(rng.uniform(0.2, 1.5, dim)), float(rng.uniform(0.5, 2.0)),
                          float(rng.uniform(1e-3, 0.1)), fam, p)

    spec = SourceModelSpec(kern(), tuple(kern() for _ in range(n_sources - 1)))
    n = int(rng.integers(1, 9))
    data = Dataset(BoxBounds.unit(dim), rng.integers(0, n_sources, n), rng.uniform(0, 1, (n, dim)),
                   rng.normal(size=n))
    kernels = [(k.family, k.p, k.lengthscale, k.signal_variance) for k in spec.kernels()]
    noise = {i: spec.noise_variance(i) for i in range(n_sources)}
    sites = [(int(s), tuple(x)) for s, x in zip(data.sources, data.X)]
    return GpModel(spec, data, standardize=False), kernels, noise, sites, data.y


def test_criterion_4_numerics(verdict):
    rng = np.random.default_rng(4)
    post_err = 0.0
    for i in range(100):
        dim, n_sources = 1 + i % 3, 1 + i % 2
        m, kern, noise, sites, y = random_gp(rng, dim, n_sources)
        q = [(int(rng.integers(0, n_sources)), tuple(rng.uniform(0, 1, dim))) for _ in range(4)]
        mu, cov = dense_posterior(kern, noise, sites, y, q)
        for j, (s, x) in enumerate(q):
            mean, var = posterior(m, s, x)
            post_err = max(post_err, abs(mean - mu[j]), abs(var - max(cov[j, j], 0.0)))

    rule = gauss_hermite(10)
    mom_err = 0.0
    for k in range(19):
        want = 0.0 if k % 2 else (float(factorial2(k - 1)) if k else 1.0)
        mom_err = max(mom_err, abs(rule.expect(lambda z: z ** k) - want) / max(1.0, want))
    ref_nodes, _ = hermite_rule(10)
    mom_err = max(mom_err, float(np.max(np.abs(np.sort(rule.nodes) - np.sort(ref_nodes)))))

    sig_err = 0.0
    for i in range(30):
        dim = 1 + i % 3
        m, kern, noise, sites, y = random_gp(rng, dim, 3)
        x_eval = tuple(rng.uniform(0, 1, dim))
        cand = (int(rng.integers(0, 3)), tuple(rng.uniform(0, 1, dim)))
        m_c, v_c = dense_posterior(kern, noise, sites, y, [cand])
        sd = math.sqrt(v_c[0, 0] + noise[cand[0]])
        shifted = [dense_posterior(kern, noise, sites + [cand], list(y) + [m_c[0] + sd * z], [(0, x_eval)])[0][0]
                   for z in (0.0, 1.0)]
        sig_err = max(sig_err, abs(sigma_tilde(m, x_eval, cand[0], cand[1]) - (shifted[1] - shifted[0])))

    ok = post_err <= 1e-8 and mom_err <= 1e-9 and sig_err <= 1e-8
    verdict(4, ok, f"posterior max err {post_err:.1e} (100 instances), GH n=10 moments 0..18 max rel err "
                   f"{mom_err:.1e}, sigma_tilde max err {sig_err:.1e} (30 instances)")
    assert ok


# -- 5-8: Branin-Hoo benchmark runs ---------------------------------------------

BRANIN = ExperimentConfig(objective="BraninHoo", alpha=0.9, replicates=10, base_seed=0)
_RUNS = {}


def branin_runs(mode):
    """Ten paired replicates per mode (same seeds, hence the same initial designs)."""
    if mode not in _RUNS:
        cfg = replace(BRANIN, horizon_mode=mode)
        t0 = time.perf_counter()
        results = [run_experiment(cfg, replicate_seed(cfg.base_seed, r)) for r in range(cfg.replicates)]
        _RUNS[mode] = (results, time.perf_counter() - t0)
    return _RUNS[mode]


@pytest.mark.slow
def test_criterion_5_benchmark_regression(verdict):
    adaptive, seconds = branin_runs("adaptive")
    greedy, _ = branin_runs("greedy")
    a, g = aggregate(adaptive).mean_gap, aggregate(greedy).mean_gap
    assert [r.f_init for r in adaptive] == [r.f_init for r in greedy]  # paired seeds
    ok = a >= g and abs(a - 0.864) <= 0.15 and seconds < 1800
    verdict(5, ok, f"Branin-Hoo adaptive mean Gap {a:.4f} vs greedy {g:.4f} on 10 paired seeds "
                   f"(target 0.864 +- 0.15); adaptive runtime {seconds / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_fixed_horizon_trend(verdict):
    g2 = aggregate(branin_runs("fixed:2")[0]).mean_gap
    g5 = aggregate(branin_runs("fixed:5")[0]).mean_gap
    ok = g2 >= g5 - 0.05
    verdict(6, ok, f"Branin-Hoo mean Gap FIXED(2) {g2:.4f} vs FIXED(5) {g5:.4f} (need >= FIXED(5) - 0.05)")
    if not ok:
        pytest.xfail("qualitative trend not reproduced; see the decisions ledger")


@pytest.mark.slow
def test_criterion_7_horizon_distribution(verdict):
    summary = aggregate(branin_runs("adaptive")[0])
    freq = summary.horizon_frequency
    assert sum(freq.values()) > 0
    modal = min(freq, key=lambda h: (-freq[h], h))
    ok = modal <= 3
    verdict(7, ok, f"adaptive horizon histogram {freq}, modal h = {modal}")
    if not ok:
        pytest.xfail("modal horizon above 3 (reported, not asserted)")


@pytest.mark.slow
def test_criterion_8_persisted_invariants(verdict, tmp_path):
    total, problems = 0, []
    for mode in ("adaptive", "greedy", "fixed:2", "fixed:5"):
        for r, res in enumerate(branin_runs(mode)[0]):
            write_result(res, tmp_path, r)
    runs = load_runs(tmp_path)
    for rec in runs:
        total += 1
        problems += [f"{rec['path']}: {p}" for p in check_run(rec)]
        if not 0.0 <= rec["gap"] <= 1.0:
            problems.append(f"{rec['path']}: gap {rec['gap']}")
    ok = total == 40 and not problems
    verdict(8, ok, f"{total} persisted runs, {len(problems)} invariant violations")
    assert ok, problems[:5]
