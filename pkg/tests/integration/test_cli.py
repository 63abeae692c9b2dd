"""
Integration tests for the command-line interface.
"""

import json
import os

import pytest

from monodrift import cli

OU_CONFIG = """
model = "linear"
seed = 11
eps = 0.05

[space]
geometry = "single"

[grid]
t1 = 1.0
dt = 0.01

[audit]
n_samples = 200
conditions = ["A3", "A4", "A5"]

[pullback]
n_schedule = [1, 2, 4]
dt = 0.01
n_draws = 50
n_permutations = 50

[rate]
t_back = 5.0
dt = 0.01
"""


@pytest.fixture
def ou_config(tmp_path):
    path = tmp_path / "ou.toml"
    path.write_text(OU_CONFIG, encoding="utf-8")
    return str(path)


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def test_parse_args():
    """Test argument parsing."""
    args = cli.parse_args(["rate", "--config", "run.toml", "--seed", "4"])
    assert args.command == "rate"
    assert args.config == "run.toml"
    assert args.seed == 4
    assert args.workers is None


def test_schema_command(tmp_path):
    """Test the schema is written into the output directory."""
    assert cli.main(["schema", "--out", str(tmp_path)]) == 0
    schema = read_json(tmp_path / "config_schema.json")
    assert "model" in schema["properties"]


def test_check_command(ou_config, tmp_path):
    """Test the check report and manifest."""
    out = tmp_path / "check"
    assert cli.main(["check", "--config", ou_config, "--out", str(out)]) == 0
    report = read_json(out / "check.json")
    assert report["d1"] is True
    assert report["constants"]["eps_tilde"] == pytest.approx(1.0 / 9.0)
    assert [a["condition"] for a in report["audits"]] == ["A3", "A4", "A5"]
    manifest = read_json(out / "manifest.json")
    assert manifest["seed"] == 11
    assert sorted(manifest["files"]) == ["audits.csv", "check.json"]


def test_rate_command(ou_config, tmp_path):
    """Test the OU rate through the CLI and byte-identical reruns."""
    first, second = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["rate", "--config", ou_config, "--out", str(first)]) == 0
    assert cli.main(["rate", "--config", ou_config, "--out", str(second)]) == 0
    report = read_json(first / "rate.json")
    assert report["value"] == pytest.approx(0.25, rel=0.02)
    assert report["converged"] is True
    for name in ("control.csv", "trace.csv", "rate.json"):
        with open(first / name, "rb") as a, open(second / name, "rb") as b:
            assert a.read() == b.read(), name


def test_simulate_with_plots(ou_config, tmp_path):
    """Test the simulate outputs, including the optional plot."""
    config = tmp_path / "plots.toml"
    config.write_text("plots = true\n" + OU_CONFIG, encoding="utf-8")
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(config), "--out", str(out)]) == 0
    for name in ("trajectory.csv", "energy.csv", "energy.svg", "simulate.json"):
        assert os.path.exists(out / name), name
    with open(out / "trajectory.csv", encoding="utf-8") as f:
        rows = f.read().splitlines()
    assert rows[0] == "t,coeff_0"
    assert len(rows) == 102
    with open(out / "energy.csv", encoding="utf-8") as f:
        header = f.readline().strip()
    assert header == "t,h_sq,v_sq_int,h_beta_v_int,h_2beta"


def test_pullback_and_invariant(ou_config, tmp_path):
    """Test the pull-back and invariant-law commands run end to end."""
    out = tmp_path / "pb"
    assert cli.main(["pullback", "--config", ou_config, "--out", str(out)]) == 0
    diag = read_json(out / "pullback.json")
    assert diag["start_times"] == [-1.0, -2.0, -4.0]
    assert cli.main(["invariant", "--config", ou_config, "--out", str(out)]) == 0
    report = read_json(out / "invariant.json")
    assert report["n_draws"] == 50
    assert set(report["evolved"]) >= {"statistic", "p_value", "p_flag"}


def test_seed_override(ou_config, tmp_path):
    """Test --seed replaces the configured seed in the manifest."""
    out = tmp_path / "seeded"
    args = ["simulate", "--config", ou_config, "--out", str(out), "--seed", "5"]
    assert cli.main(args) == 0
    assert read_json(out / "manifest.json")["config"]["seed"] == 5


def test_bad_config_exit_code(tmp_path):
    """Test configuration errors exit with code 2."""
    path = tmp_path / "bad.toml"
    path.write_text('model = "linear"\n[grid]\ndt = -1.0\n', encoding="utf-8")
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "none.toml")]) == 2


def test_missing_config_exit_code(ou_config, tmp_path):
    """Test a command without --config fails as a configuration error."""
    assert cli.main(["rate", "--out", str(tmp_path)]) == 2
    assert cli.main(["check", "--config", ou_config, "--seed", "-1"]) == 2
