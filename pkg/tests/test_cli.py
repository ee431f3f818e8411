import json
from pathlib import Path

import numpy as np
import pytest

from enclosure_lab.cli import main
from enclosure_lab.scenario import dump_scenario, load_scenario, scenario_dict
from enclosure_lab import systems

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def write(tmp_path, name, data):
    path = tmp_path / f"{name}.yaml"
    dump_scenario(data, path)
    return str(path)


def test_scenario_round_trip(tmp_path):
    ch = systems.system_b()
    path = write(tmp_path, "b", scenario_dict("b", ch, np.eye(4) / 4, run={"paths": 10, "steps": 5}))
    sc = load_scenario(path)
    assert np.abs(sc.channel.ops - ch.ops).max() == 0
    assert sc.run.paths == 10 and sc.run.steps == 5


@pytest.mark.parametrize("text", [
    "kraus: [[[1, 0], [0, 1]]",                       # broken YAML
    "name: x\n",                                      # no kraus section
    "kraus: [[[1, 0], [0, 0.5]]]",                    # not trace preserving
    "kraus: [[[[1, 0], [0, 0]], [[0, 0], [1, 0]]]]\nrun: {paths: 5, bogus: 1}",
])
def test_parse_failures(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    assert main(["analyze", str(path), "--out", str(tmp_path / "o")]) == 3


def test_analyze_system_a(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["analyze", str(SCENARIOS / "system_a.yaml"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["identifiability"]["N"] == 1
    assert abs(rep["identifiability"]["kappa"] - 0.864064) < 1e-6
    assert rep["structure"]["dims"] == [1, 1]
    assert main(["report", str(SCENARIOS / "system_a.yaml"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "N=1" in text and "kappa=0.8641" in text


def test_transient_exit_code(tmp_path):
    assert main(["analyze", str(SCENARIOS / "decaying_level.yaml"), "--out", str(tmp_path)]) == 4


def test_non_identifiable(tmp_path):
    args = [str(SCENARIOS / "system_c.yaml"), "--out", str(tmp_path), "--paths", "20", "--steps", "10"]
    assert main(["analyze"] + args) == 5
    assert main(["simulate"] + args) == 5
    assert main(["simulate"] + args + ["--force"]) == 0
    sel = json.loads((tmp_path / "report.json").read_text())["simulation"]["selection"]
    assert sel["undecided"] == 1.0


def test_cutoff_exit_code(tmp_path):
    data = scenario_dict("b", systems.system_b(), analysis={"cutoff": 1})
    assert main(["analyze", write(tmp_path, "b", data), "--out", str(tmp_path / "o")]) == 7


def test_controllability_refused(tmp_path):
    data = scenario_dict("a", systems.system_a(), np.diag([0.0, 1.0]),
                         control={"target": 0, "hamiltonian": systems.SIGMA_Z, "u_bound": 1.0})
    assert main(["stabilize", write(tmp_path, "a", data), "--out", str(tmp_path / "o")]) == 6


def test_report_missing_or_corrupt(tmp_path):
    scen = str(SCENARIOS / "system_a.yaml")
    assert main(["report", scen, "--out", str(tmp_path / "none")]) == 8
    (tmp_path / "report.json").write_text("{not json")
    assert main(["report", scen, "--out", str(tmp_path)]) == 8


def test_simulate_outputs(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", str(SCENARIOS / "system_b.yaml"), "--out", str(out),
                 "--paths", "50", "--steps", "30", "--seed", "3"]) == 0
    lines = (out / "series.csv").read_text().splitlines()
    assert lines[0].startswith("step,mean_W,se_W,mean_weight_0,mean_weight_1,undecided_fraction")
    assert len(lines) == 32
    assert len((out / "paths.csv").read_text().splitlines()) == 51
    rep = json.loads((out / "report.json").read_text())
    assert rep["flags"]["seed"] == 3 and rep["flags"]["paths"] == 50
    env = json.loads((out / "environment.json").read_text())
    assert "wall_time_s" in env


def test_thread_count_never_changes_csv(tmp_path, monkeypatch):
    scen = str(SCENARIOS / "system_a_control.yaml")
    common = ["--paths", "600", "--steps", "20"]
    assert main(["stabilize", scen, "--out", str(tmp_path / "t1"), "--threads", "1"] + common) == 0
    monkeypatch.setenv("ENCLOSURE_LAB_THREADS", "3")
    assert main(["stabilize", scen, "--out", str(tmp_path / "t3")] + common) == 0
    assert json.loads((tmp_path / "t3" / "environment.json").read_text())["threads"] == 3
    for name in ("series.csv", "paths.csv", "control.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t3" / name).read_bytes()


def test_quiescent_scenario(tmp_path, capsys):
    scen = str(SCENARIOS / "system_a_quiescent.yaml")
    assert main(["stabilize", scen, "--out", str(tmp_path), "--paths", "40", "--steps", "20"]) == 0
    assert main(["report", scen, "--out", str(tmp_path)]) == 0
    assert "FAIL" not in capsys.readouterr().out
