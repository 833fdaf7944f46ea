import json
import subprocess
import sys
from pathlib import Path

import pytest

from rolemesh.cli import main

SUITES = Path(__file__).resolve().parents[1] / "scenarios"
PIPE = SUITES / "pipeline" / "pipeline_00.yaml"


def test_run_single_text(capsys):
    assert main(["run", "--scenario", str(PIPE)]) == 0
    out = capsys.readouterr().out
    assert "outcome: success (completed)" in out and "instructions: 1" in out


def test_structured_report_is_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["run", "--scenario", str(PIPE), "--format", "structured", "--seed", "3",
                     "--report", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["seed"] == 3


def test_no_monitor_exits_nonzero(capsys):
    assert main(["run", "--scenario", str(PIPE), "--no-monitor", "--format", "structured"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["outcome"] == "escalated_without_monitor" and report["toggles"]["no_monitor"]


def test_generate_then_run_suite(tmp_path, capsys):
    out = tmp_path / "suite"
    assert main(["generate", "--kind", "team", "--count", "3", "--out", str(out)]) == 0
    assert len(list(out.glob("*.yaml"))) == 3
    capsys.readouterr()
    assert main(["run", "--suite", str(out), "--format", "structured", "--jobs", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [json.loads(x)["scenario"] for x in lines] == ["team_00", "team_01", "team_02"]


def test_bad_inputs_exit_two(tmp_path, capsys):
    assert main(["run", "--suite", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\n")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rolemesh", "run", "--scenario", str(PIPE)],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "outcome: success" in proc.stdout
