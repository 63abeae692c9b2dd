"""
Unit tests for the ldp_probe module.
"""

import math

import numpy as np
import pytest

from monodrift import ldp_probe, models, noise as noise_mod, spectral
from monodrift.skeleton import RateOptions
from monodrift.stationary import PullbackConfig, SampleSet
from monodrift.utils.error_handling import InsufficientDataError, UsageError


@pytest.fixture
def ou_model():
    space = spectral.single_mode_space()
    return models.build_linear(space, 1.0, noise_mod.build_noise(space, "additive"))


def test_slope_fit_exact_exponential():
    """Test an exact p = exp(−I/ε) gives back I."""
    eps = [0.2, 0.1, 0.05, 0.025]
    p = [math.exp(-0.25 / e) for e in eps]
    result = ldp_probe.slope_fit(eps, p)
    assert result.fitted_limit == pytest.approx(0.25, abs=1e-12)
    assert result.fitted_slope == pytest.approx(0.0, abs=1e-10)
    assert result.flags == []


def test_slope_fit_prefactor():
    """Test a prefactor moves into the slope, not the limit."""
    eps = [0.025, 0.2, 0.05, 0.1]
    p = [0.3 * math.exp(-0.4 / e) for e in eps]
    result = ldp_probe.slope_fit(eps, p, rate_reference=0.4)
    assert result.eps_list == [0.2, 0.1, 0.05, 0.025]
    assert result.fitted_limit == pytest.approx(0.4, abs=1e-12)
    assert result.fitted_slope == pytest.approx(-math.log(0.3), rel=1e-10)
    assert result.relative_error == pytest.approx(0.0, abs=1e-10)


def test_slope_fit_zero_hits():
    """Test zero estimates are flagged and skipped by the fit."""
    eps = [0.2, 0.1, 0.05, 0.025]
    p = [math.exp(-0.25 / e) for e in eps[:3]] + [0.0]
    result = ldp_probe.slope_fit(eps, p)
    assert math.isinf(result.neg_eps_log_p[-1])
    assert result.flags == ["zero hits at eps=0.025"]
    assert result.fitted_limit == pytest.approx(0.25, abs=1e-12)


def test_slope_fit_needs_three_positive():
    """Test the fit refuses fewer than three positive estimates."""
    with pytest.raises(InsufficientDataError):
        ldp_probe.slope_fit([0.2, 0.1, 0.05], [0.1, 0.01, 0.0])
    with pytest.raises(UsageError):
        ldp_probe.slope_fit([0.2, 0.1], [0.1, 0.01, 0.001])
    with pytest.raises(UsageError):
        ldp_probe.slope_fit([0.2, 0.1, 0.05], [0.1, 1.5, 0.001])


def test_inversions():
    """Test counting steps that move away from the reference."""
    result = ldp_probe.ProbeResult(
        eps_list=[0.2, 0.1, 0.05],
        p_hat=[0.1, 0.1, 0.1],
        stderr=[0.0, 0.0, 0.0],
        neg_eps_log_p=[0.4, 0.3, 0.35],
        fitted_limit=0.3,
        fitted_slope=0.0,
        rate_reference=0.25,
    )
    assert result.inversions == 1
    assert result.relative_error == pytest.approx(0.2)
    assert [row["eps"] for row in result.rows()] == [0.2, 0.1, 0.05]


def test_event_spec():
    """Test event validation and membership."""
    space = spectral.sine_space(3)
    ball = ldp_probe.EventSpec("h_ball_complement", 1.0)
    mode = ldp_probe.EventSpec("mode_threshold", 0.5, mode_index=2)
    states = np.array([[0.0, 0.0, 1.0], [0.0, 0.9, 0.0], [0.0, 0.0, -0.5]])
    assert ball.contains(space, states).tolist() == [True, False, False]
    assert mode.contains(space, states).tolist() == [True, False, True]
    with pytest.raises(UsageError):
        ldp_probe.EventSpec("sphere", 1.0)
    with pytest.raises(UsageError):
        ldp_probe.EventSpec("h_ball_complement", 0.0)
    with pytest.raises(UsageError):
        ldp_probe.EventSpec("mode_threshold", 1.0)
    with pytest.raises(UsageError):
        ldp_probe.EventSpec("mode_threshold", 1.0, mode_index=5).contains(space, states)


def test_event_is_monotone_in_radius():
    """Test shrinking the radius can only add hits."""
    space = spectral.sine_space(4)
    values = spectral.sample_states(space, 2.0, seed=3, count=500)
    samples = SampleSet(values, 0.0, 0.1, np.arange(500))
    counts = [
        ldp_probe.estimate_from_samples(
            space, samples, ldp_probe.EventSpec("h_ball_complement", r)
        ).hits
        for r in (0.5, 1.0, 1.5)
    ]
    assert counts[0] >= counts[1] >= counts[2]
    est = ldp_probe.estimate_from_samples(
        space, samples, ldp_probe.EventSpec("h_ball_complement", 10.0)
    )
    assert est.zero_hits and est.p_hat == 0.0


def test_event_rate_reference(ou_model):
    """Test the boundary rate of the OU ball complement is r²."""
    event = ldp_probe.EventSpec("h_ball_complement", 0.5)
    ref = ldp_probe.event_rate_reference(ou_model, event, RateOptions(), 5.0, 0.01)
    assert ref["value"] == pytest.approx(0.25, rel=0.02)
    assert ref["mode"] == 0


def test_initial_condition_sweep(ou_model):
    """Test a start inside the event makes it more likely."""
    event = ldp_probe.EventSpec("h_ball_complement", 0.5)
    rows = ldp_probe.initial_condition_sweep(
        ou_model, 0.05, event, [np.zeros(1), np.ones(1)], 0.5, 500, seed=2, dt=0.01
    )
    assert [row["h_norm"] for row in rows] == [0.0, 1.0]
    assert rows[1]["p_hat"] > rows[0]["p_hat"]
    with pytest.raises(UsageError):
        ldp_probe.initial_condition_sweep(
            ou_model, 0.05, event, [np.zeros(1)], 0.0, 10, seed=2
        )


def test_probe_ou(ou_model):
    """Test the probe estimates decrease with ε."""
    cfg = PullbackConfig(n_schedule=(4,), dt=0.01, enforce_threshold=False)
    event = ldp_probe.EventSpec("h_ball_complement", 0.5)
    result = ldp_probe.probe(
        ou_model, [0.05, 0.2, 0.1], event, 2000, cfg, seed=1, rate_reference=0.25
    )
    assert result.eps_list == [0.2, 0.1, 0.05]
    assert result.n_draws == [2000, 2000, 2000]
    assert result.p_hat[0] > result.p_hat[1] > result.p_hat[2]
    assert result.rate_reference == 0.25
