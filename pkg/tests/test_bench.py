import json
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest

from _oracles import greedy_choice, tree_value
from rollout_bo.bench import ExperimentConfig, aggregate, gap, run_experiment, run_replicates
from rollout_bo.bench.experiment import ExperimentResult, parse_mode, replicate_seed
from rollout_bo.bench.persist import check_run, gap_from_trace, load_runs, markdown_report, write_result
from rollout_bo.gp import Dataset, GpModel, default_spec
from rollout_bo.sources import ObjectiveSpec

# a cheap discretized configuration: fixed hyperparameters, exhaustive scans
MICRO = ExperimentConfig(objective="Forrester", N=2, n_initial=3, candidate_grid=7, mle_restarts=0, n_nodes=3,
                         deep_nodes=None, horizon_mode="fixed:2", replicates=1)


def fake_result(g, hist=None):
    return ExperimentResult(g, [], hist or {}, 0, "f", 0.0, 0.0, 0.0, 1.0, 1.0, (0.0,), 0.0)


# -- gap and aggregate ----------------------------------------------------------

def test_gap_examples():
    assert gap(1.0, 6.0, 6.0) == 1.0
    assert gap(1.0, 1.0, 6.0) == 0.0
    assert gap(1.0, 5.0, 6.0) == pytest.approx(0.8, abs=1e-15)
    assert gap(2.0, 2.0, 2.0) == 1.0
    assert math.copysign(1.0, gap(-3.0, -3.0, 1.0)) == 1.0
    with pytest.raises(ValueError):
        gap(2.0, 2.0, 1.0)


def test_aggregate_examples():
    s = aggregate([fake_result(0.8)])
    assert s.mean_gap == pytest.approx(0.8) and s.median_gap == pytest.approx(0.8)
    s = aggregate([fake_result(0.7, {1: 3}), fake_result(0.8, {1: 1, 2: 2}), fake_result(0.9)])
    assert s.mean_gap == pytest.approx(0.8, abs=1e-15) and s.median_gap == 0.8
    assert s.horizon_frequency == {1: 4, 2: 2}
    assert len(s.rows) == 3
    with pytest.raises(ValueError):
        aggregate([])


# -- configuration --------------------------------------------------------------

def test_parse_mode():
    assert parse_mode("ADAPTIVE") == ("adaptive", None)
    assert parse_mode("fixed:3") == ("fixed", 3)
    with pytest.raises(ValueError):
        parse_mode("lookahead")


@pytest.mark.parametrize("bad", [dict(replicates=0), dict(horizon_mode="fixed:6"), dict(horizon_mode="fixed:0"),
                                 dict(alpha=1.2), dict(h_bar=1), dict(objective="Rosenbrock"),
                                 dict(mle_restarts=-1), dict(candidate_grid=1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_budget_rules():
    single = ExperimentConfig()
    assert single.n_evaluations == 20
    assert [s.cost for s in single.source_costs] == [10.0]
    assert single.initial_budget == 200.0
    miso = ExperimentConfig.from_mapping({"objective": "GoldsteinPrice", "sources": [{"kind": "sinusoid2d"}]})
    assert [s.cost for s in miso.source_costs] == [10.0, 2.0]
    assert miso.initial_budget == 40.0


def test_mapping_round_trip_and_fingerprint():
    cfg = ExperimentConfig.from_mapping({"objective": "GoldsteinPrice", "sources": [{"kind": "sinusoid2d"}],
                                         "error_bound": {"K_const": 2.0}})
    again = ExperimentConfig.from_mapping(json.loads(json.dumps(cfg.to_mapping())))
    assert again == cfg and again.fingerprint() == cfg.fingerprint()
    assert replace(cfg, alpha=0.5).fingerprint() != cfg.fingerprint()
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"alhpa": 0.9})


def test_replicate_seeds_distinct():
    seeds = {replicate_seed(0, r) for r in range(100)}
    assert len(seeds) == 100
    assert replicate_seed(3, 4) == replicate_seed(3, 4)


# -- run_experiment -------------------------------------------------------------

def test_zero_evaluations():
    r = run_experiment(replace(MICRO, N=0), 5)
    assert r.gap == 0.0 and r.trace == [] and r.horizon_histogram == {}
    assert r.f_final == r.f_init


def test_unmeetable_budget_raises():
    with pytest.raises(ValueError):
        run_experiment(replace(MICRO, budget=1.0), 0)


def test_greedy_equals_adaptive_with_infinite_error():
    base = replace(MICRO, N=4, candidate_grid=9)
    g = run_experiment(replace(base, horizon_mode="greedy"), 3)
    a = run_experiment(replace(base, horizon_mode="adaptive", e_bar_override=math.inf), 3)
    assert g.trace == a.trace
    assert all(t.h == 1 for t in g.trace)
    assert g.gap == a.gap


def test_budget_ledger_and_stop():
    r = run_experiment(replace(MICRO, N=10, budget=17.0, cost_truth=5.0), 2)
    assert len(r.trace) == 3
    assert sum(t.cost for t in r.trace) + r.trace[-1].budget == 17.0
    assert all(b.budget <= a.budget for a, b in zip(r.trace, r.trace[1:]))
    assert [t.k for t in r.trace] == [1, 2, 3]


def test_reproducible_records():
    a = run_experiment(replace(MICRO, N=3), 11)
    b = run_experiment(replace(MICRO, N=3), 11)
    assert json.dumps(a.record()) == json.dumps(b.record())
    assert a.trace == b.trace


def test_persisted_files_are_byte_identical(tmp_path):
    for out in ("a", "b"):
        r = run_experiment(replace(MICRO, N=3), 11)
        write_result(r, tmp_path / out, 0)
    for suffix in (".json", ".csv"):
        fa, = (tmp_path / "a").glob(f"*/rep000{suffix}")
        fb, = (tmp_path / "b").glob(f"*/rep000{suffix}")
        assert fa.read_bytes() == fb.read_bytes()


def stage_model(config, rows):
    """The fixed-hyperparameter model the loop holds after ``rows``."""
    obj = ObjectiveSpec(config.objective)
    spec = default_spec(obj.dim, p=config.kernel_p, bounds=obj.bounds)
    data = Dataset(obj.bounds, [s for s, _, _ in rows], [x for _, x, _ in rows], [y for _, _, y in rows])
    return GpModel(spec, data)


def oracle_pick(model, grid, n_left, config, budget, cost):
    """Exhaustive-tree choice for one stage on the standardized scale."""
    k = model.spec.truth_kernel
    kern = [(k.family, k.p, k.lengthscale, k.signal_variance)]
    noise = {0: model.spec.noise_variance(0)}
    sites = [(0, tuple(x)) for x in model.data.X]
    y = list((model.data.y - model.y_mean) / model.y_scale)
    pts = [tuple(g) for g in grid]
    depth = min(int(config.horizon_mode.split(":")[1]), n_left)
    if depth <= 1:
        (_, x), _, _ = greedy_choice(kern, noise, sites, y, pts, pts, {0: cost}, budget, config.n_nodes)
        return x
    vals = [tree_value(kern, noise, sites, y, pts, pts, {0: cost}, budget, config.n_nodes, config.alpha, depth,
                       first=(0, p)) for p in pts]
    top = max(vals)
    return min(p for p, v in zip(pts, vals) if v >= top - 1e-12 * max(1.0, abs(top)))


@pytest.mark.parametrize("seed", range(4))
def test_micro_instance_replays_oracle_selections(seed):
    config = replace(MICRO, N=2)
    r = run_experiment(config, seed)
    grid = np.linspace(0, 1, 7)[:, None]
    rows = list(r.initial)
    assert len(r.trace) == 2
    for t in r.trace:
        model = stage_model(config, rows)
        n_left = config.n_evaluations - t.k + 1
        assert t.x == oracle_pick(model, grid, n_left, config, t.budget + t.cost, t.cost)
        rows.append((t.source, t.x, t.y))


def test_micro_instance_gap_matches_observations():
    r = run_experiment(replace(MICRO, N=4, noise_sd=0.0), 1)
    f = ObjectiveSpec("Forrester").value
    f_init = max(f(x) for s, x, _ in r.initial if s == 0)
    f_final = max([f_init] + [f(t.x) for t in r.trace])
    assert r.f_init == f_init and r.f_final == f_final
    assert r.gap == gap(f_init, f_final, ObjectiveSpec("Forrester").known_max)


def test_multi_source_short_run():
    cfg = ExperimentConfig.from_mapping({
        "objective": "GoldsteinPrice", "sources": [{"kind": "sinusoid2d"}], "N": 3, "n_initial": 4,
        "mle_restarts": 0, "candidate_grid": 5, "n_nodes": 3, "horizon_mode": "fixed:2", "deep_nodes": None,
    })
    r = run_experiment(cfg, 0)
    assert sum(1 for s, _, _ in r.initial if s == 1) == 4
    assert 1 <= len(r.trace) <= 3
    assert all(t.source in (0, 1) for t in r.trace)
    assert 0.0 <= r.gap <= 1.0


def test_fitted_run_smoke():
    cfg = replace(MICRO, mle_restarts=2, candidate_grid=None, grid_per_dim=30, acq_starts=2, acq_evals=40,
                  rollout_starts=1, rollout_evals=6, horizon_mode="adaptive", N=2)
    r = run_experiment(cfg, 0)
    assert len(r.trace) == 2 and 0.0 <= r.gap <= 1.0


# -- persistence ----------------------------------------------------------------

def test_aggregate_matches_recomputation_from_disk(tmp_path):
    cfg = replace(MICRO, N=2, replicates=30)
    results = run_replicates(cfg)
    for r, res in enumerate(results):
        write_result(res, tmp_path, r)
    runs = load_runs(tmp_path)
    assert len(runs) == 30
    from_disk = [gap_from_trace(rec) for rec in runs]
    assert statistics.fmean(from_disk) == pytest.approx(aggregate(results).mean_gap, abs=1e-15)
    assert all(check_run(rec) == [] for rec in runs)


def test_parallel_replicates_match_serial():
    cfg = replace(MICRO, N=2, replicates=3)
    serial = [r.record() for r in run_replicates(cfg)]
    parallel = [r.record() for r in run_replicates(cfg, jobs=2)]
    assert serial == parallel


def test_check_run_flags_tampering(tmp_path):
    write_result(run_experiment(replace(MICRO, N=2), 0), tmp_path, 0)
    rec, = load_runs(tmp_path)
    assert check_run(rec) == []
    rec["trace"][-1]["budget"] = str(float(rec["trace"][-1]["budget"]) + 1)
    assert any("budget" in p for p in check_run(rec))
    rec, = load_runs(tmp_path)
    rec["trace"][-1]["incumbent"] = "-1e9"
    assert any("incumbent" in p for p in check_run(rec))


def test_markdown_report(tmp_path):
    for mode in ("greedy", "fixed:2"):
        write_result(run_experiment(replace(MICRO, horizon_mode=mode), 0), tmp_path, 0)
    text = markdown_report(load_runs(tmp_path))
    assert "## Gap" in text and "## Rolling horizon frequency" in text
    assert "| Forrester |" in text
    assert "greedy (α=0.9)" in text and "fixed:2 (α=0.9)" in text
    assert markdown_report([]) == "No results found.\n"
