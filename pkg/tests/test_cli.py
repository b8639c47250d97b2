import json
import subprocess
import sys

import pytest
import yaml

from rollout_bo.bench.cli import main

MICRO = {"objective": "Forrester", "N": 2, "n_initial": 3, "candidate_grid": 7, "mle_restarts": 0,
         "n_nodes": 3, "deep_nodes": None, "horizon_mode": "fixed:2", "replicates": 2}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_run_writes_files(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", MICRO)
    out = tmp_path / "res"
    assert main(["run", "--config", cfg, "--out", str(out), "--seed", "4", "--mode", "greedy"]) == 0
    assert "Forrester greedy" in capsys.readouterr().out
    recs = sorted(out.glob("*/rep*.json"))
    assert len(recs) == 2
    rec = json.loads(recs[0].read_text())
    assert rec["config"]["base_seed"] == 4 and rec["horizon_mode"] == "greedy"
    assert (out / "runtimes.csv").read_text().count("\n") == 2


def test_bench_matrix_and_report(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "b.yaml", {**MICRO, "replicates": 1, "modes": ["greedy", "fixed:2"],
                                           "alphas": [0.9, 0.5]})
    out = tmp_path / "res"
    assert main(["bench", "--config", cfg, "--out", str(out)]) == 0
    assert len(list(out.glob("*/rep000.json"))) == 4
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "fixed:2 (α=0.5)" in text and "greedy (α=0.9)" in text
    assert (out / "report.md").read_text() == text


def test_report_flags_violations(tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["run", "--config", write_yaml(tmp_path / "c.yaml", MICRO), "--out", str(out)]) == 0
    rep = sorted(out.glob("*/rep000.csv"))[0]
    lines = rep.read_text().splitlines()
    cols = lines[-1].split(",")
    cols[-2] = "123.0"  # remaining budget
    rep.write_text("\n".join(lines[:-1] + [",".join(cols)]) + "\n")
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 1
    assert "budget ledger" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["run", "--mode", "fixed:9"], ["run", "--config", "/nonexistent.yaml"]])
def test_errors_exit_two(args, tmp_path, capsys):
    assert main(args + ["--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_key_rejected(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", {**MICRO, "alhpa": 0.5})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_bench_requires_config():
    with pytest.raises(SystemExit):
        main(["bench"])


def test_module_entry_point(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", {**MICRO, "replicates": 1})
    proc = subprocess.run([sys.executable, "-m", "rollout_bo.bench.cli", "-v", "run", "--config", cfg,
                           "--out", str(tmp_path / "r")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "INFO" in proc.stderr
