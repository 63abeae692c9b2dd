"""
Unit tests for the skeleton module.
"""

import numpy as np
import pytest

from monodrift import models, noise as noise_mod, skeleton, spectral
from monodrift.integrator import Control, TimeGrid
from monodrift.utils.error_handling import UsageError


@pytest.fixture
def ou_model():
    space = spectral.single_mode_space()
    return models.build_linear(space, 1.0, noise_mod.build_noise(space, "additive"))


def penalised(model, xi, grid, values, target, mu):
    control = Control(grid, values)
    path = skeleton.skeleton_solve(model, xi, grid, control)
    gap = spectral.h_norm_sq(model.space, path.final - target)
    return skeleton.action(control) + mu * float(gap)


def test_action_scaling():
    """Test the action is quadratic in the control."""
    grid = TimeGrid(0.0, 1.0, 0.1)
    control = Control(grid, np.full((10, 2), 0.5))
    assert skeleton.action(control) == pytest.approx(0.5 * 0.1 * 20 * 0.25)
    doubled = Control(grid, 2.0 * control.values)
    assert skeleton.action(doubled) == pytest.approx(4.0 * skeleton.action(control))
    assert skeleton.action(Control.zeros(grid, 2)) == 0.0


def test_skeleton_solve_checks_columns(ou_model):
    """Test a control with the wrong number of columns is refused."""
    grid = TimeGrid(0.0, 1.0, 0.1)
    with pytest.raises(UsageError):
        skeleton.skeleton_solve(ou_model, np.zeros(1), grid, Control.zeros(grid, 2))


def test_skeleton_dissipates():
    """Test the uncontrolled Ginzburg-Landau skeleton loses energy."""
    space = spectral.sine_space(6)
    model = models.build_model(
        "gl1d", space, noise_mod.build_noise(space, "additive"), {"chi": 1.0}
    )
    xi = spectral.sample_state(space, 1.0, 5)
    path = skeleton.skeleton_solve(model, xi, TimeGrid(0.0, 1.0, 1e-3), None)
    h = spectral.h_norm_sq(space, path.states)
    assert h[-1] < 0.5 * h[0]


@pytest.mark.parametrize(
    "name,kind,params",
    [
        ("burgers1d", "additive", {"amplitudes": 0.7}),
        ("gl1d", "bounded_mult", {"theta": 0.5, "ref_mode": 1}),
    ],
)
def test_adjoint_gradient_matches_finite_differences(name, kind, params):
    """Test the discrete adjoint against central differences of J."""
    space = spectral.sine_space(4)
    noise = noise_mod.build_noise(space, kind, params)
    model = models.build_model(name, space, noise, {})
    grid = TimeGrid(0.0, 0.1, 0.01)
    xi = spectral.sample_state(space, 1.0, 1)
    target = spectral.sample_state(space, 1.0, 2)
    values = 0.3 * np.cos(np.arange(grid.n_steps * space.dim))
    values = values.reshape(grid.n_steps, space.dim)
    mu = 5.0
    grad = skeleton.adjoint_gradient(model, xi, grid, Control(grid, values), target, mu)
    numeric = np.zeros_like(values)
    h = 1e-6
    for idx in np.ndindex(values.shape):
        up, down = values.copy(), values.copy()
        up[idx] += h
        down[idx] -= h
        numeric[idx] = (
            penalised(model, xi, grid, up, target, mu)
            - penalised(model, xi, grid, down, target, mu)
        ) / (2.0 * h)
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_adjoint_gradient_vanishes_at_free_motion(ou_model):
    """Test zero control is stationary when the target is the free endpoint."""
    grid = TimeGrid(0.0, 1.0, 0.01)
    free = skeleton.skeleton_solve(ou_model, np.array([0.8]), grid, None)
    grad = skeleton.adjoint_gradient(
        ou_model, np.array([0.8]), grid, Control.zeros(grid, 1), free.final, 10.0
    )
    assert np.allclose(grad, 0.0)
    with pytest.raises(UsageError):
        skeleton.adjoint_gradient(
            ou_model, np.array([0.8]), grid, Control.zeros(grid, 1), free.final, 0.0
        )


def test_zero_target_has_zero_rate(ou_model):
    """Test the rest state costs nothing."""
    result = skeleton.rate_endpoint(
        ou_model, np.zeros(1), -1.0, 0.0, np.zeros(1), dt=0.01
    )
    assert result.value == 0.0
    assert result.converged


def test_ou_quasipotential(ou_model):
    """Test the OU rate of reaching 0.5 is 0.25."""
    result = skeleton.rate_endpoint(
        ou_model, np.zeros(1), -5.0, 0.0, np.array([0.5]), dt=0.01
    )
    assert result.value == pytest.approx(0.25, rel=0.02)
    assert result.endpoint_gap < 1e-3
    assert result.converged
    assert len(result.stages) == 3
    assert result.trace and result.iterations >= 1


def test_unreachable_target():
    """Test a target outside the controllable modes is reported as unconverged."""
    space = spectral.sine_space(2)
    noise = noise_mod.build_noise(space, "additive", {"k": 1})
    model = models.build_linear(space, 1.0, noise)
    result = skeleton.rate_endpoint(
        model, space.zeros(), -2.0, 0.0, np.array([0.0, 0.5]), dt=0.01
    )
    assert not result.converged
    assert result.endpoint_gap == pytest.approx(0.5, rel=1e-6)


def test_rate_path_of_free_motion(ou_model):
    """Test following the uncontrolled path costs nothing."""
    grid = TimeGrid(0.0, 1.0, 0.01)
    free = skeleton.skeleton_solve(ou_model, np.array([1.0]), grid, None)
    result = skeleton.rate_path(ou_model, np.array([1.0]), free)
    assert result.value == 0.0
    assert result.endpoint_gap == 0.0


def test_skeleton_pullback_limit(ou_model):
    """Test the pull-back limit under a constant control."""
    control_grid = TimeGrid(-10.0, 0.0, 0.01)
    control = Control(control_grid, np.full((control_grid.n_steps, 1), 0.5))
    path, diag = skeleton.skeleton_pullback(
        ou_model, control, (2, 4, 8), dt=0.01
    )
    assert path.final[0] == pytest.approx(0.5, abs=1e-3)
    assert diag.endpoint_gaps[0] > diag.endpoint_gaps[1]
    with pytest.raises(UsageError):
        skeleton.skeleton_pullback(ou_model, control, (4, 2), dt=0.01)


def test_lipschitz_probe(ou_model):
    """Test sup-norm sensitivity to the control is at most √T."""
    grid = TimeGrid(0.0, 1.0, 0.01)
    probe = skeleton.skeleton_lipschitz_probe(ou_model, np.zeros(1), grid, n_pairs=5)
    assert len(probe["ratios"]) == 5
    assert 0.0 < probe["constant"] <= 1.0 + 1e-12


def test_quasipotential_crosscheck():
    """Test the Navier-Stokes rate matches χ‖φ‖²_V on a small mode set."""
    space = spectral.torus_space(1.0)
    model = models.build_ns_2d(space, 1.0, noise_mod.build_noise(space, "additive"))
    phi = 0.2 * space.unit(0) - 0.1 * space.unit(3)
    report = skeleton.quasipotential_crosscheck(
        model, [space.zeros(), phi], t_back=5.0
    )
    assert report["rows"][0]["rate"] == 0.0
    assert report["mean_ratio"] == pytest.approx(1.0, rel=0.02)
    assert report["doubling_ratio"] == pytest.approx(4.0, rel=0.02)


def test_quasipotential_crosscheck_needs_ns(ou_model):
    """Test other models are refused."""
    with pytest.raises(UsageError):
        skeleton.quasipotential_crosscheck(ou_model, [np.array([0.5])])


@pytest.mark.parametrize("geometry", ["sine1d", "torus2d"])
def test_skeleton_energy_bound(geometry):
    """Test ‖X(t)‖²_H ≤ e^{−λ₁γ₀t/4}‖ξ‖²_H along uncontrolled paths."""
    if geometry == "sine1d":
        space = spectral.sine_space(8)
        name = "burgers1d"
    else:
        space = spectral.torus_space(2.0)
        name = "ns2d"
    model = models.build_model(
        name, space, noise_mod.build_noise(space, "additive"), {"chi": 1.0}
    )
    grid = TimeGrid(0.0, 2.0, 1e-3)
    xi = spectral.sample_state(space, 1.0, 8)
    path = skeleton.skeleton_solve(model, xi, grid, None)
    h = spectral.h_norm_sq(space, path.states)
    rate = space.lambda1 * model.mono.gamma0 / 4.0
    bound = np.exp(-rate * grid.times) * h[0]
    assert np.all(h <= 1.05 * bound)


def test_rate_nonincreasing_in_horizon(ou_model):
    """Test a longer horizon never makes the target more expensive."""
    values = [
        skeleton.rate_endpoint(
            ou_model, np.zeros(1), -t_back, 0.0, np.array([0.5]), dt=0.01
        ).value
        for t_back in (0.5, 1.0, 3.0)
    ]
    assert values[0] >= values[1] >= values[2]


def test_contraction_check(ou_model):
    """Test the cheapest path ending at φ costs the endpoint rate."""
    report = skeleton.contraction_check(ou_model, np.array([0.5]), t_back=3.0)
    assert report["min_path_rate"] == report["path_rates"][0]
    assert report["relative_difference"] < 0.05
    assert report["path_rates"][1] > report["path_rates"][0]
