import json
import subprocess
import sys

import pytest

from sclc_margin.cli import main
from sclc_margin.harness import shipped_config


@pytest.fixture
def cfg1(tmp_path):
    p = tmp_path / "ex1.json"
    shipped_config(1).save(p)
    return p


def test_show_config_outputs_shipped_json(capsys):
    assert main(["show-config", "2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data == shipped_config(2).to_dict()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sclc_margin", "show-config", "1"], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["example"] == 1


def test_config_errors_exit_3(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"example": 1}')
    assert main(["validate", "--config", str(bad), "--gain", "0.1"]) == 3
    assert "config error" in capsys.readouterr().err


def test_usage_errors_exit_3(cfg1):
    with pytest.raises(SystemExit) as info:
        main(["validate", "--config", str(cfg1)])
    assert info.value.code == 3


def test_bad_number_list_exit_3(cfg1):
    assert main(["validate", "--config", str(cfg1), "--gain", "a,b"]) == 3


def test_analysis_errors_exit_2(tmp_path):
    cfg = shipped_config(2).with_overrides({"plant.k0": [[0.0, 0.0]]})
    p = tmp_path / "ex2.json"
    cfg.save(p)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_validate_command(cfg1, capsys):
    assert main(["validate", "--config", str(cfg1), "--gain", "0.45"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["bounded"] is True and out["perturbation"] == "gain(0.45)"


def test_simulate_command_writes_timeseries(cfg1, tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg1), "--out", str(out), "--delay", "0.1", "--T", "2"]) == 0
    assert capsys.readouterr().out.startswith("converged")
    lines = (out / "timeseries.csv").read_text().splitlines()
    assert lines[0].startswith("t,x1,x2,xp_hat1") and len(lines) == 2002


def test_compare_jlc_command(cfg1, capsys):
    assert main(["compare-jlc", "--config", str(cfg1), "--x0", "0,0;1,1", "--T", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "x0,sclc,jlc,sclc_settling,jlc_settling"
    assert lines[1] == "0 0,converged,converged,0,0"
    assert lines[2].startswith("1 1,converged,converged,")


def test_margin_theory_command(cfg1, capsys):
    assert main(["margin", "theory", "--config", str(cfg1)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["method"] == "theory" and 0.3 < out["gamma2"] < 0.5


def test_example_command_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["example", "1", "--out", str(out), "--method", "theory"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "example,gamma1,tau1,gamma2,tau2,gamma,tau,kl,method"
    assert lines[1].split(",")[-1] == "theoretical"
    for name in ("timeseries.csv", "bode_primary.csv", "bode_jlc.csv", "g0b.csv", "report.json", "summary.csv"):
        assert (out / name).exists()


def test_example_command_rejects_mismatched_config(tmp_path, cfg1):
    assert main(["example", "2", "--config", str(cfg1)]) == 3
