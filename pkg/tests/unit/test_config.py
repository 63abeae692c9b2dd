"""
Unit tests for the config module.
"""

import json

import pytest

from monodrift import config
from monodrift.utils.error_handling import ConfigValidationError


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_minimal_config(tmp_path):
    """Test a minimal Burgers config fills in every default."""
    path = write(tmp_path, 'model = "burgers1d"\n\n[space]\nn_modes = 8\n')
    cfg = config.parse_config(path)
    assert cfg.model == "burgers1d"
    assert cfg.seed == 0
    assert cfg.rate.mu_schedule == [10.0, 100.0, 1000.0]
    model = cfg.build_model()
    assert model.space.dim == 8
    assert cfg.initial_state(model.space)[0] == 0.5


def test_error_names_key_and_line(tmp_path):
    """Test a negative step size is reported with its key and line."""
    path = write(tmp_path, 'model = "linear"\n\n[grid]\ndt = -0.1\n')
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(path)
    key, line, _ = info.value.errors[0]
    assert key == "grid.dt"
    assert line == 4
    assert "grid.dt (line 4)" in str(info.value)


def test_all_errors_reported(tmp_path):
    """Test unknown keys and bad values are collected together."""
    text = 'model = "heat"\nseed = -1\n\n[grid]\nfoo = 1\n'
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(write(tmp_path, text))
    keys = {key for key, _, _ in info.value.errors}
    assert {"model", "seed", "grid.foo"} <= keys
    lines = {key: line for key, line, _ in info.value.errors}
    assert lines["grid.foo"] == 5


def test_missing_model(tmp_path):
    """Test the only required key."""
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(write(tmp_path, "seed = 1\n"))
    assert info.value.errors[0][0] == "model"
    assert info.value.exit_code == 2


def test_syntax_error_line(tmp_path):
    """Test TOML syntax errors carry the offending line."""
    path = write(tmp_path, 'model = "linear"\nseed = = 3\n')
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(path)
    assert info.value.errors[0][1] == 2


def test_missing_file(tmp_path):
    """Test a missing file is a validation error."""
    with pytest.raises(ConfigValidationError):
        config.parse_config(str(tmp_path / "absent.toml"))


def test_threshold_rejection(tmp_path):
    """Test an intensity above ε̃ is rejected unless enforcement is off."""
    text = 'model = "linear"\neps = 0.2\n\n[space]\ngeometry = "single"\n'
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(write(tmp_path, text))
    key, line, message = info.value.errors[0]
    assert (key, line) == ("eps", 2)
    assert "eps_tilde" in message
    relaxed = config.parse_config(
        write(tmp_path, "enforce_thresholds = false\n" + text, "relaxed.toml")
    )
    assert relaxed.eps == 0.2
    below = config.parse_config(write(tmp_path, text.replace("0.2", "0.05"), "ok.toml"))
    assert below.eps == 0.05


def test_manifest_roundtrip(tmp_path):
    """Test a manifest's config block is accepted as a config."""
    cfg = config.parse_config(write(tmp_path, 'model = "gl1d"\nseed = 7\n'))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"config": cfg.model_dump()}), encoding="utf-8")
    again = config.parse_config(str(manifest))
    assert again == cfg


def test_noise_params_and_probe_event():
    """Test section helpers."""
    cfg = config.validate(
        {
            "model": "ns2d",
            "space": {"geometry": "torus2d", "k_max": 1.0},
            "noise": {"kind": "additive", "amplitudes": [0.5]},
            "probe": {"event_kind": "h_ball_complement", "radius_or_level": 0.3},
        }
    )
    assert cfg.noise.params() == {
        "amplitudes": [0.5],
        "sigma0": 1.0,
        "theta": 0.0,
        "ref_mode": 0,
    }
    event = cfg.probe.event()
    assert event.kind == "h_ball_complement" and event.mode_index is None
    assert cfg.build_noise().c_b == pytest.approx(4 * 0.25)
    assert cfg.pullback_config().n_schedule == (2, 4, 8, 16)


def test_schema_lists_every_section():
    """Test the JSON schema exposes the sections and the required model."""
    schema = config.config_schema()
    assert schema["required"] == ["model"]
    for section in ("space", "noise", "grid", "rate", "probe"):
        assert section in schema["properties"]


def test_overrides_reach_threshold_check(tmp_path, monkeypatch):
    """Test command-line overrides are applied before the ε̃ check runs."""
    seen = []
    resolve = config.framework_check.resolve_constants

    def recording(model, eps, n_samples, radius_h, seed, workers=None):
        seen.append(seed)
        return resolve(model, eps, n_samples, radius_h, seed, workers)

    monkeypatch.setattr(config.framework_check, "resolve_constants", recording)
    text = 'model = "linear"\nseed = 1\neps = 0.05\n\n[space]\ngeometry = "single"\n'
    cfg = config.parse_config(write(tmp_path, text), overrides={"seed": 5})
    assert cfg.seed == 5
    assert seen == [5]


def test_invalid_override_is_reported(tmp_path):
    """Test an override is validated like a file value."""
    text = 'model = "linear"\n\n[space]\ngeometry = "single"\n'
    with pytest.raises(ConfigValidationError) as info:
        config.parse_config(write(tmp_path, text), overrides={"seed": -1})
    assert info.value.errors[0][0] == "seed"
