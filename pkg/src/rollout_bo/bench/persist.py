"""On-disk layout for experiment results and the Markdown report.

Each replicate writes ``<tag>/rep<r>.csv`` (stage trace, with one ``k=0`` row
per initial-design observation) and ``<tag>/rep<r>.json`` (summary record plus the
config). Wall-clock times go to ``runtimes.csv`` so that the per-replicate
files stay byte-identical across reruns.
"""
from __future__ import annotations

import csv
import json
import statistics
from collections import Counter, defaultdict
from pathlib import Path

from .experiment import ExperimentConfig, ExperimentResult, gap


def run_tag(config: ExperimentConfig) -> str:
    mode = config.horizon_mode.replace(":", "")
    return f"{config.objective}_{mode}_a{config.alpha:g}_{config.fingerprint()}"


def _num(v) -> str:
    return repr(float(v))


def trace_header(dim: int) -> list:
    return ["k", "h", "source", *[f"x{j + 1}" for j in range(dim)], "y", "kg", "e_bar", "cost", "budget",
            "incumbent"]


def write_result(result: ExperimentResult, out_dir, replicate: int) -> Path:
    """Write one replicate; returns the JSON path."""
    config = result.config
    folder = Path(out_dir) / run_tag(config)
    folder.mkdir(parents=True, exist_ok=True)
    dim = config.dim
    stem = folder / f"rep{replicate:03d}"
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(dim))
        for src, x, y in result.initial:
            w.writerow([0, "", src, *map(_num, x), _num(y), "", "", _num(0.0), _num(result.initial_budget),
                        _num(result.f_init)])
        for t in result.trace:
            w.writerow([t.k, t.h, t.source, *map(_num, t.x), _num(t.y), _num(t.kg), _num(t.e_bar),
                        _num(t.cost), _num(t.budget), _num(t.incumbent)])
    record = dict(result.record(), replicate=replicate, objective=config.objective,
                  horizon_mode=config.horizon_mode, alpha=config.alpha, config=config.to_mapping())
    path = stem.with_suffix(".json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    with open(Path(out_dir) / "runtimes.csv", "a", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow([run_tag(config), replicate, result.seed,
                                                      f"{result.runtime:.3f}"])
    return path


def read_trace(csv_path) -> list:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_runs(out_dir) -> list:
    """All persisted replicate records, each with its parsed ``trace`` rows."""
    runs = []
    for path in sorted(Path(out_dir).glob("*/rep*.json")):
        rec = json.loads(path.read_text())
        rec["trace"] = read_trace(path.with_suffix(".csv"))
        rec["path"] = str(path)
        runs.append(rec)
    return runs


def gap_from_trace(rec: dict) -> float:
    """Recompute the Gap from the persisted trace alone."""
    rows = rec["trace"]
    return gap(float(rows[0]["incumbent"]), float(rows[-1]["incumbent"]), float(rec["f_star"]))


def check_run(rec: dict, atol: float = 0.0) -> list:
    """Invariant violations of one persisted replicate (empty when clean)."""
    problems = []
    rows = rec["trace"]
    g = gap_from_trace(rec)
    if not 0.0 <= g <= 1.0:
        problems.append(f"gap {g} outside [0, 1]")
    if g != rec["gap"]:
        problems.append(f"recorded gap {rec['gap']} differs from trace gap {g}")
    b0 = float(rows[0]["budget"])
    if b0 != float(rec["initial_budget"]):
        problems.append("initial budget row does not match the record")
    n0 = sum(1 for row in rows if int(row["k"]) == 0)
    if any(int(row["k"]) == 0 for row in rows[n0:]) or any(
            float(row["budget"]) != b0 or float(row["cost"]) != 0.0 for row in rows[:n0]):
        problems.append("initial-design rows are not a zero-cost prefix")
    remaining = b0
    prev_inc = float(rows[0]["incumbent"])
    h_bar = rec["config"]["h_bar"]
    start = max(n0, 1)
    for prev, row in zip(rows[start - 1:], rows[start:]):
        if int(row["k"]) != int(prev["k"]) + 1:
            problems.append(f"stage index jumps at k={row['k']}")
        remaining -= float(row["cost"])
        if abs(remaining - float(row["budget"])) > atol:
            problems.append(f"budget ledger off at k={row['k']}")
        if float(row["budget"]) < 0:
            problems.append(f"negative budget at k={row['k']}")
        if float(row["incumbent"]) < prev_inc:
            problems.append(f"incumbent decreased at k={row['k']}")
        prev_inc = float(row["incumbent"])
        if not 1 <= int(row["h"]) <= h_bar:
            problems.append(f"horizon {row['h']} outside 1..{h_bar} at k={row['k']}")
    return problems


def _label(rec) -> str:
    return f"{rec['horizon_mode']} (α={rec['alpha']:g})"


def markdown_report(runs: list) -> str:
    """Gap table (mean / median per function and mode) and horizon frequencies."""
    if not runs:
        return "No results found.\n"
    groups = defaultdict(list)
    for rec in runs:
        groups[(rec["objective"], _label(rec))].append(rec)
    functions = sorted({k[0] for k in groups})
    labels = sorted({k[1] for k in groups})

    lines = ["## Gap", "", "Mean and median Gap per function and horizon mode (replicates in brackets).", ""]
    lines.append("| Function | " + " | ".join(labels) + " |")
    lines.append("|---" * (len(labels) + 1) + "|")
    for fn in functions:
        cells = []
        for lab in labels:
            recs = groups.get((fn, lab))
            if not recs:
                cells.append("")
                continue
            g = [r["gap"] for r in recs]
            cells.append(f"{statistics.fmean(g):.3f} / {statistics.median(g):.3f} [{len(g)}]")
        lines.append(f"| {fn} | " + " | ".join(cells) + " |")

    lines += ["", "## Rolling horizon frequency", ""]
    h_max = max(int(h) for rec in runs for h in rec["horizon_histogram"]) if any(
        rec["horizon_histogram"] for rec in runs) else 1
    hs = list(range(1, h_max + 1))
    lines.append("| Function | Mode | " + " | ".join(f"h={h}" for h in hs) + " | modal h |")
    lines.append("|---" * (len(hs) + 3) + "|")
    for (fn, lab), recs in sorted(groups.items()):
        freq = Counter()
        for r in recs:
            freq.update({int(h): c for h, c in r["horizon_histogram"].items()})
        total = sum(freq.values())
        if total == 0:
            continue
        modal = min(freq, key=lambda h: (-freq[h], h))
        cells = [f"{freq[h] / total:.2f}" for h in hs]
        lines.append(f"| {fn} | {lab} | " + " | ".join(cells) + f" | {modal} |")
    return "\n".join(lines) + "\n"
