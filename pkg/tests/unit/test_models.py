"""
Unit tests for the models module.
"""

import numpy as np
import pytest

from monodrift import models, noise as noise_mod, spectral
from monodrift.utils.error_handling import ConfigurationError, UsageError


def numeric_jacobian(func, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((func(x + e) - func(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize(
    "coefficients,lipschitz,expected",
    [
        ((-1.0, 0.0, -1.0), 0.0, 0.0),
        ((1.0, 0.0, -1.0), 0.0, 1.0),
        ((0.0, 1.0, -1.0), 0.0, 1.0 / 3.0),
        ((-1.0,), 2.0, 1.0),
        ((), 0.0, 0.0),
    ],
)
def test_one_sided_constant(coefficients, lipschitz, expected):
    """Test C_g = (sup g′) ∨ 0 for admissible reaction terms."""
    g = models.ReactionSpec(coefficients, lipschitz)
    assert g.one_sided_constant() == pytest.approx(expected)


@pytest.mark.parametrize("coefficients", [(0.0, 1.0), (0.0, 0.0, 1.0), (0, 0, 0, 1.0)])
def test_one_sided_constant_rejects(coefficients):
    """Test unbounded or too fast growing reaction terms are rejected."""
    with pytest.raises(ConfigurationError):
        models.ReactionSpec(tuple(float(a) for a in coefficients)).one_sided_constant()


def test_linear_model_constants():
    """Test the scalar OU preset."""
    space = spectral.single_mode_space()
    spec = models.build_linear(space, 2.0, noise_mod.build_noise(space, "additive"))
    assert spec.mono.gamma0 == 2.0
    assert spec.mono.c_rho1 == 0.0
    assert spec.drift.is_linear
    assert np.allclose(spec.drift(0.1, np.array([0.5])), [-1.0])


def test_linear_gamma_halves_for_multiplicative_noise():
    """Test γ₀ = χ/2 once the noise depends on the state."""
    space = spectral.sine_space(3)
    noise = noise_mod.build_noise(space, "bounded_mult", {"theta": 0.5})
    assert models.build_linear(space, 1.0, noise).mono.gamma0 == 0.5


def test_burgers_rejects_decaying_noise():
    """Test presets that require β = 0 refuse β = 2 noise."""
    space = spectral.sine_space(4)
    noise = noise_mod.build_noise(space, "decaying_mult", {"sigma0": 1.0})
    with pytest.raises(ConfigurationError):
        models.build_burgers_1d(space, 1.0, noise)


def test_burgers_rejects_torus_space():
    """Test the geometry check."""
    space = spectral.torus_space(1.0)
    with pytest.raises(ConfigurationError):
        models.build_burgers_1d(space, 1.0, noise_mod.build_noise(space, "additive"))


@pytest.mark.parametrize(
    "name,params",
    [
        ("burgers1d", {"chi": 0.5}),
        ("gl1d", {"chi": 1.0, "alpha": 1.0, "c": 2.0}),
        ("reaction1d", {"chi": 1.0, "alpha": 1.0, "lipschitz": 0.5}),
        (
            "semilinear1d",
            {"chi": 1.0, "g_coefficients": [0.5, 0.0, -1.0], "f_coef": 2.0},
        ),
    ],
)
def test_drift_jacobian_sine(name, params):
    """Test analytic drift Jacobians against central differences."""
    space = spectral.sine_space(5)
    noise = noise_mod.build_noise(space, "additive")
    spec = models.build_model(name, space, noise, params)
    x = spectral.sample_state(space, 1.0, 7)
    numeric = numeric_jacobian(lambda v: spec.drift(0.0, v), x)
    assert np.allclose(spec.drift_jacobian(0.0, x), numeric, atol=1e-6)
    assert not spec.drift.is_linear


def test_ns_jacobian_and_energy():
    """Test the NS Jacobian and that the transport term conserves energy."""
    space = spectral.torus_space(2.0)
    spec = models.build_ns_2d(space, 1.0, noise_mod.build_noise(space, "additive"))
    x = spectral.sample_state(space, 1.0, 3)
    numeric = numeric_jacobian(lambda v: spec.drift(0.0, v), x)
    assert np.allclose(spec.drift_jacobian(0.0, x), numeric, atol=1e-6)
    convective = spec.drift.nonlinear(0.0, x)
    assert abs(float(convective @ x)) < 1e-10, "⟨F(u,u), u⟩ must vanish"
    enstrophy = float(convective @ (space.v_weights * x))
    assert abs(enstrophy) < 1e-10, "⟨F(u,u), Au⟩ must vanish"
    assert spec.mono.gamma0 == 0.5


def test_ns_rejects_sine_space():
    """Test ns2d refuses a non-torus space."""
    space = spectral.sine_space(4)
    with pytest.raises(ConfigurationError):
        models.build_ns_2d(space, 1.0, noise_mod.build_noise(space, "additive"))


def test_build_model_errors():
    """Test unknown presets and invalid parameters."""
    space = spectral.sine_space(3)
    noise = noise_mod.build_noise(space, "additive")
    with pytest.raises(ConfigurationError):
        models.build_model("heat", space, noise, {})
    with pytest.raises(UsageError):
        models.build_model("burgers1d", space, noise, {"chi": 0.0})
    with pytest.raises(ConfigurationError):
        models.build_model("gl1d", space, noise, {"alpha": -1.0})


def test_with_constants():
    """Test replacing a monotonicity constant keeps the rest."""
    space = spectral.sine_space(3)
    spec = models.build_model(
        "gl1d", space, noise_mod.build_noise(space, "additive"), {}
    )
    updated = spec.with_constants(c_rho1=2.5)
    assert updated.mono.c_rho1 == 2.5
    assert updated.mono.gamma0 == spec.mono.gamma0
    assert spec.mono.c_rho1 is None
