import json

import pytest

from qfeedback.harness.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from qfeedback.harness.io import read_csv, read_summary


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"system": {"kind": "spin", "two_J": 2}, "T": 0.5, "dt": 1e-3,
                             "controller": {"kind": "switching", "gamma": 0.4},
                             "initial_state": {"kind": "random_pure"}, "n_trajectories": 4}))
    return p


def test_validate_config(config_file, capsys):
    assert main(["validate-config", "--config", str(config_file), "--eta", "0.5"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["eta"] == 0.5 and out["record_stride"] == 100


def test_config_errors(config_file, tmp_path, capsys):
    assert main(["validate-config", "--config", str(config_file), "--eta", "2"]) == EXIT_CONFIG
    assert "eta" in capsys.readouterr().err
    assert main(["validate-config", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": {"kind": "spin", "two_J": 2}, "T": 1.0, "extra": 1}))
    assert main(["validate-config", "--config", str(bad)]) == EXIT_CONFIG
    assert "extra" in capsys.readouterr().err


def test_simulate(config_file, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(config_file), "--index", "2", "--seed", "9", "--out", str(out)]) == 0
    header, data = read_csv(out / "trajectory_2.csv")
    assert header[:2] == ["t", "fidelity"] and data.shape[0] == 6
    assert json.loads((out / "config.json").read_text())["master_seed"] == 9


def test_simulate_numerical_failure(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"system": {"kind": "spin", "two_J": 2}, "T": 2e10, "dt": 1e10,
                             "controller": {"kind": "constant", "k": 1e300}}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL


def test_ensemble_uses_env_out(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("QFEEDBACK_OUT", str(tmp_path / "env"))
    assert main(["ensemble", "--config", str(config_file), "--workers", "2", "--n-trajectories", "3",
                 "--write-trajectories"]) == 0
    s = read_summary(tmp_path / "env" / "summary.json")
    assert s["n"] == 3
    assert (tmp_path / "env" / "trajectory_2.csv").exists()


def test_gamma_override(config_file, capsys):
    assert main(["validate-config", "--config", str(config_file), "--gamma", "0.6"]) == 0
    assert json.loads(capsys.readouterr().out)["controller"]["gamma"] == 0.6


def test_reduce_requires_zero(config_file, tmp_path):
    assert main(["reduce", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_check_generator(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"system": {"kind": "spin", "two_J": 2}, "T": 1.0}))
    rc = main(["check-generator", "--config", str(p), "--function", "v", "--samples", "20000", "--assert"])
    out = json.loads(capsys.readouterr().out)
    assert rc == EXIT_OK and out["passed"]
    assert out["analytic"] == pytest.approx(-16 / 9)


def test_reachability(capsys):
    assert main(["reachability", "--system", "two_qubit", "--kappa", "2", "--assert"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["results"][0]["pass"]
    assert main(["reachability", "--system", "two_qubit", "--kappa", "1", "--assert"]) == EXIT_CHECK
    capsys.readouterr()
    assert main(["reachability", "--system", "spin:3"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["results"]) == 4
    assert main(["reachability", "--system", "spin:x"]) == EXIT_CONFIG
