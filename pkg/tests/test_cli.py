import csv
import json

import pytest

from conftest import gen
from dualsched.cli import main
from dualsched.core import format_fjs
from dualsched.repository import load


@pytest.fixture
def fjs_file(tmp_path):
    path = tmp_path / "small.fjs"
    path.write_text(format_fjs(gen(4, 2, 3)))
    return path


def test_run_builtin(fjs_file, capsys):
    assert main(["run", "--instance", str(fjs_file), "--policy", "SPT"]) == 0
    assert "makespan" in capsys.readouterr().out


def test_run_adaptive_writes_trajectory_and_repo(fjs_file, tmp_path, capsys):
    out = tmp_path / "out"
    repo = tmp_path / "repo.jsonl"
    rc = main(["run", "--instance", str(fjs_file), "--policy", "full", "--trigger-k", "2", "--serialized",
               "--out", str(out), "--repo-path", str(repo)])
    assert rc == 0
    assert "final rule" in capsys.readouterr().out
    assert (out / "trajectory.jsonl").exists()
    assert repo.exists() and load(repo).skipped == 0


def test_run_with_disturbances(tmp_path, capsys):
    inst = tmp_path / "one.fjs"
    inst.write_text("1 1\n1 1 1 4\n")
    dist = tmp_path / "one.dist"
    dist.write_text("fail 1 1 2\n")
    assert main(["run", "--instance", str(inst), "--disturbances", str(dist), "--policy", "SPT"]) == 0
    assert "makespan 6" in capsys.readouterr().out


def test_missing_instance_is_an_error(tmp_path, capsys):
    assert main(["run", "--instance", str(tmp_path / "nope.fjs")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_suite_exits():
    with pytest.raises(SystemExit):
        main(["bench", "--suite", "/definitely/not/here"])


def test_bench_outputs(tmp_path, capsys):
    out = tmp_path / "b"
    rc = main(["bench", "--suite", "gen:3x2:0,1", "--policy", "SPT", "--policy", "FIFO", "--out", str(out)])
    assert rc == 0
    assert "SPT" in capsys.readouterr().out
    rows = list(csv.DictReader((out / "benchmark.csv").open()))
    assert len(rows) == 4
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["policies"] == ["SPT", "FIFO"] and cfg["suite"]["seeds"] == [0, 1]


def test_ablate(tmp_path):
    out = tmp_path / "a"
    assert main(["ablate", "--suite", "gen:4x2:0", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "ablation.csv").open()))
    assert {r["policy"] for r in rows} == {"full", "no_loop", "no_repo", "no_both"}


def test_stress_csv(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["stress", "--seed", "0", "--out", str(out)]) == 0
    assert "adaptive" in capsys.readouterr().out
    header = (out / "stress.csv").read_text().splitlines()[0]
    assert header == "time,throughput,policy"


def test_latency_json(tmp_path):
    out = tmp_path / "l"
    assert main(["latency", "--episodes", "3", "--out", str(out)]) == 0
    data = json.loads((out / "latency.json").read_text())
    assert data["reactive_median_us"] > 0


def test_repo_actions(tmp_path, capsys):
    repo = str(tmp_path / "r.jsonl")
    assert main(["repo", "add", "--repo-path", repo, "--jobs", "6", "--machines", "3", "--rule=-op_proc_time",
                 "--value", "0.2"]) == 0
    assert main(["repo", "add", "--repo-path", repo, "--jobs", "12", "--machines", "3", "--rule", "clock",
                 "--value", "0.1"]) == 0
    capsys.readouterr()
    assert main(["repo", "show", "--repo-path", repo]) == 0
    assert "2 entries" in capsys.readouterr().out
    assert main(["repo", "query", "--repo-path", repo, "--jobs", "6", "--machines", "3", "--k", "1"]) == 0
    assert capsys.readouterr().out.strip().endswith("-op_proc_time")
    assert main(["repo", "compact", "--repo-path", repo]) == 0


def test_repo_rejects_bad_rule(tmp_path):
    assert main(["repo", "add", "--repo-path", str(tmp_path / "r.jsonl"), "--rule", "import os"]) == 2


def test_thresholds_flag(tmp_path):
    out = tmp_path / "t"
    assert main(["bench", "--suite", "gen:3x2:0", "--policy", "SPT", "--thresholds", "0.02,0.3,1.96,4",
                 "--out", str(out)]) == 0
    th = json.loads((out / "config.json").read_text())["thresholds"]
    assert (th["eps_rel"], th["d_min"], th["t_alpha"], th["n"]) == (0.02, 0.3, 1.96, 4)
