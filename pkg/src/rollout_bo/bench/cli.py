"""Command line entry point: ``rollout-bo run|bench|report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .experiment import ExperimentConfig, aggregate, run_replicates
from .persist import check_run, load_runs, markdown_report, write_result

log = logging.getLogger("rollout_bo")


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return data


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["base_seed"] = args.seed
    if args.replicates is not None:
        out["replicates"] = args.replicates
    if args.mode is not None:
        out["horizon_mode"] = args.mode
    if args.alpha is not None:
        out["alpha"] = args.alpha
    return out


def _run_config(config: ExperimentConfig, out_dir: Path, jobs: int) -> list:
    results = run_replicates(config, jobs)
    for r, res in enumerate(results):
        write_result(res, out_dir, r)
        log.info("%s rep %d seed %d: gap %.4f (%.1fs)", config.objective, r, res.seed, res.gap, res.runtime)
    summary = aggregate(results)
    print(f"{config.objective} {config.horizon_mode} alpha={config.alpha:g}: "
          f"mean gap {summary.mean_gap:.4f}, median {summary.median_gap:.4f}, "
          f"horizons {summary.horizon_frequency}")
    return results


def cmd_run(args) -> int:
    config = ExperimentConfig.from_mapping({**_load_yaml(args.config), **_overrides(args)})
    _run_config(config, Path(args.out), args.jobs)
    return 0


def cmd_bench(args) -> int:
    data = _load_yaml(args.config)
    functions = data.pop("functions", None) or [data.get("objective", "BraninHoo")]
    modes = data.pop("modes", None) or [data.get("horizon_mode", "adaptive")]
    alphas = data.pop("alphas", None) or [data.get("alpha", 0.9)]
    over = _overrides(args)
    if "horizon_mode" in over:
        modes = [over.pop("horizon_mode")]
    if "alpha" in over:
        alphas = [over.pop("alpha")]
    base = {**data, **over}
    for fn in functions:
        for mode in modes:
            for alpha in alphas:
                cfg = ExperimentConfig.from_mapping({**base, "objective": fn, "horizon_mode": mode,
                                                     "alpha": alpha})
                _run_config(cfg, Path(args.out), args.jobs)
    return 0


def cmd_report(args) -> int:
    runs = load_runs(args.out)
    text = markdown_report(runs)
    bad = 0
    for rec in runs:
        for p in check_run(rec):
            bad += 1
            print(f"invariant violation in {rec['path']}: {p}", file=sys.stderr)
    Path(args.out, "report.md").write_text(text)
    print(text, end="")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rollout-bo", description="Non-myopic rollout Bayesian optimization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="YAML file with ExperimentConfig fields")
        p.add_argument("--seed", type=int, help="base seed for the replicate streams")
        p.add_argument("--replicates", type=int)
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--mode", help="adaptive, greedy or fixed:<h>")
        p.add_argument("--alpha", type=float)
        p.add_argument("--jobs", type=int, default=1, help="replicates run in parallel")

    p = sub.add_parser("run", help="run the replicates of one config")
    common(p, False)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("bench", help="run a config matrix (functions x modes x alphas)")
    common(p, True)
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("report", help="aggregate persisted results into Markdown")
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
