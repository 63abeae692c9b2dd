"""
Unit tests for the stationary (pull-back) module.
"""

import numpy as np
import pytest

from monodrift import integrator, models, noise as noise_mod, spectral, stationary
from monodrift.utils.error_handling import InadmissibleEpsilonError, UsageError


@pytest.fixture
def ou_model():
    space = spectral.single_mode_space()
    return models.build_linear(space, 1.0, noise_mod.build_noise(space, "additive"))


def test_d_metric_basic(ou_model):
    """Test the path metric is zero on the diagonal, symmetric and below one."""
    grid = integrator.TimeGrid(-2.0, 0.0, 0.01)
    k = ou_model.noise_consts.u_dim
    x = integrator.simulate(
        ou_model, 0.1, np.array([1.0]), grid, integrator.brownian(grid, k, 1)
    )
    y = integrator.simulate(
        ou_model, 0.1, np.array([-3.0]), grid, integrator.brownian(grid, k, 2)
    )
    cfg = stationary.MetricConfig(n_max=8)
    assert stationary.d_metric(x, x, cfg, ou_model.space) == 0.0
    dxy = stationary.d_metric(x, y, cfg, ou_model.space)
    assert dxy == stationary.d_metric(y, x, cfg, ou_model.space)
    assert 0.0 < dxy < 1.0


def test_d_metric_rejects_other_grid(ou_model):
    """Test paths on different grids are not comparable."""
    a = integrator.Path(integrator.TimeGrid(0.0, 1.0, 0.5), np.zeros((3, 1)))
    b = integrator.Path(integrator.TimeGrid(0.0, 1.0, 0.25), np.zeros((5, 1)))
    with pytest.raises(UsageError):
        stationary.d_metric(a, b, stationary.MetricConfig(), ou_model.space)


def test_metric_config_validation():
    """Test metric parameter checks."""
    with pytest.raises(UsageError):
        stationary.MetricConfig(combine="max")
    with pytest.raises(UsageError):
        stationary.MetricConfig(n_max=0)
    with pytest.raises(UsageError):
        stationary.PullbackConfig(n_schedule=(4, 2))


def test_doubling_schedule():
    """Test the default doubling schedule."""
    assert stationary.doubling_schedule(2, 16) == (2, 4, 8, 16)


def test_pullback_contracts(ou_model):
    """Test deeper starts agree more closely on the shared window."""
    cfg = stationary.PullbackConfig(n_schedule=(2, 4, 8), dt=0.01)
    path, diag = stationary.pullback(ou_model, 0.0, np.array([1.0]), cfg, seed=0)
    assert path.grid.t0 == -8.0
    assert diag.start_times == [-2.0, -4.0, -8.0]
    assert diag.monotone, diag.pair_distances
    assert diag.fitted_rate < 0.0
    assert diag.endpoint_gaps[0] > diag.endpoint_gaps[1]
    assert -1.5 < diag.endpoint_rate < -0.5


def test_pullback_threshold(ou_model):
    """Test intensities at or above ε̃ are refused when enforced."""
    cfg = stationary.PullbackConfig(n_schedule=(1, 2), dt=0.01)
    with pytest.raises(InadmissibleEpsilonError):
        stationary.pullback(ou_model, 0.2, np.array([0.0]), cfg, seed=0)
    relaxed = stationary.PullbackConfig(
        n_schedule=(1, 2), dt=0.01, enforce_threshold=False
    )
    path, _ = stationary.pullback(ou_model, 0.2, np.array([0.0]), relaxed, seed=0)
    assert np.all(np.isfinite(path.states))


def test_invariant_variance(ou_model):
    """Test the stationary OU variance ε/(2 + dt) of the implicit scheme."""
    cfg = stationary.PullbackConfig(n_schedule=(8,), dt=0.01)
    samples = stationary.invariant_samples(ou_model, 0.05, 2000, cfg, master_seed=4)
    assert samples.values.shape == (2000, 1)
    assert np.var(samples.values) == pytest.approx(0.05 / 2.01, rel=0.15)
    check = stationary.stationary_moment_check(ou_model, 0.05, 1.0, samples)
    assert check["passed"]


def test_evolve_samples_keeps_law(ou_model):
    """Test evolving stationary draws forward leaves their variance in place."""
    cfg = stationary.PullbackConfig(n_schedule=(8,), dt=0.01)
    samples = stationary.invariant_samples(ou_model, 0.05, 2000, cfg, master_seed=4)
    evolved = stationary.evolve_samples(ou_model, 0.05, samples, 1.0, 9, dt=0.01)
    assert evolved.time == pytest.approx(1.0)
    assert evolved.values.shape == samples.values.shape
    assert not np.array_equal(evolved.values, samples.values)
    assert np.var(evolved.values) == pytest.approx(0.05 / 2.01, rel=0.15)


def test_invariant_samples_chunking(ou_model):
    """Test chunk size and workers leave the draws unchanged."""
    cfg = stationary.PullbackConfig(n_schedule=(2,), dt=0.01)
    a = stationary.invariant_samples(ou_model, 0.05, 40, cfg, 1, chunk=7)
    b = stationary.invariant_samples(ou_model, 0.05, 40, cfg, 1, chunk=40, workers=2)
    assert np.array_equal(a.values, b.values)


def test_two_sample_test():
    """Test equal samples are accepted and shifted samples rejected."""
    x = np.linspace(-1.0, 1.0, 50)[:, None]
    same = stationary.two_sample_test(x, x, seed=0, n_permutations=100)
    assert same.statistic == pytest.approx(0.0, abs=1e-12)
    assert same.p_flag
    shifted = stationary.two_sample_test(x, x + 3.0, seed=0, n_permutations=100)
    assert shifted.statistic > shifted.threshold
    assert not shifted.p_flag
    with pytest.raises(UsageError):
        stationary.two_sample_test(x, np.zeros((5, 2)), seed=0)


def test_stationarity_test(ou_model):
    """Test the pull-back law does not drift between two times."""
    cfg = stationary.PullbackConfig(n_schedule=(6,), dt=0.01)
    result = stationary.stationarity_test(
        ou_model, 0.05, (0.0, 1.0), 200, seed=3, cfg=cfg, n_permutations=200
    )
    assert result.p_flag, result


def test_stationarity_test_rejects_transient(ou_model):
    """Test a run started from a fixed state is rejected against its later law."""
    cfg = stationary.PullbackConfig(n_schedule=(6,), dt=0.01)
    result = stationary.stationarity_test(
        ou_model,
        0.05,
        (0.0, 4.0),
        200,
        seed=3,
        cfg=cfg,
        transient_xi=np.array([1.0]),
        n_permutations=200,
    )
    assert not result.p_flag, result
    assert result.statistic > result.threshold


def test_stationarity_test_uses_independent_draws(ou_model):
    """Test the two compared samples come from disjoint runs."""
    cfg = stationary.PullbackConfig(n_schedule=(2,), dt=0.01)
    result = stationary.stationarity_test(
        ou_model, 0.05, (0.0, 0.0), 50, seed=3, cfg=cfg, n_permutations=50
    )
    assert result.statistic > 0.0, "identical samples would give a zero statistic"
