"""
Pull-back stationary solutions, path-space metrics and stationarity tests.

A pull-back run solves the equation from a sequence of start times −n₁ > −n₂ > …
with the same initial state and the same double-sided noise path. Noise is keyed
by absolute step index, so the deep run sees exactly the increments of every
shallower run on their common window and nothing has to be stored. Consecutive
solutions are compared in the truncated metric

    d(x, y)² = Σ_{N=1}^{n_max} 2^{−N} [1 ∧ S_N ∧ I_N]

with S_N the (optionally e^{−γ(N−s)}-weighted) node sup of ‖x − y‖²_H over
[−N, N] and I_N the trapezoid integral of ‖x − y‖²_V over the same window, both
clipped to the support the paths share.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid
from scipy.spatial.distance import cdist

from monodrift import framework_check, spectral
from monodrift.integrator import (
    NoisePath,
    Path,
    TimeGrid,
    brownian,
    integrate,
    simulate,
    simulate_ensemble,
)
from monodrift.models import ModelSpec
from monodrift.utils import parallel, rng
from monodrift.utils.error_handling import InadmissibleEpsilonError, UsageError

logger = logging.getLogger(__name__)

METRIC_COMBINE = ("min", "sum", "sup")

_PERMUTATION_LEVEL = 11


@dataclass(frozen=True)
class MetricConfig:
    """Truncated path-space metric.

    Attributes:
        n_max: Number of windows [−N, N] in the series
        gamma: Weight rate of the e^{−γ(N−s)} factor on the sup term
        combine: ``min`` (1 ∧ S ∧ I), ``sum`` (1 ∧ (S + I)) or ``sup`` (1 ∧ S)
    """

    n_max: int = 32
    gamma: float = 0.0
    combine: str = "min"

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise UsageError("n_max must be at least 1")
        if self.gamma < 0.0:
            raise UsageError("metric gamma must be nonnegative")
        if self.combine not in METRIC_COMBINE:
            raise UsageError(
                f"unknown metric combine {self.combine!r}; "
                f"expected one of {', '.join(METRIC_COMBINE)}"
            )


@dataclass(frozen=True)
class PullbackConfig:
    """Schedule and tolerances of a pull-back run."""

    n_schedule: Tuple[int, ...] = (2, 4, 8, 16)
    t_end: float = 0.0
    dt: float = 1e-3
    tol: float = 1e-4
    metric: MetricConfig = field(default_factory=MetricConfig)
    enforce_threshold: bool = True

    def __post_init__(self) -> None:
        sched = tuple(int(n) for n in self.n_schedule)
        if not sched or any(n <= 0 for n in sched):
            raise UsageError("n_schedule must contain positive integers")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise UsageError("n_schedule must be increasing")
        object.__setattr__(self, "n_schedule", sched)

    @property
    def n_last(self) -> int:
        return self.n_schedule[-1]


def doubling_schedule(n_first: int = 2, n_cap: int = 64) -> Tuple[int, ...]:
    """n_first, 2·n_first, … up to ``n_cap``."""
    out = []
    n = max(1, int(n_first))
    while n <= n_cap:
        out.append(n)
        n *= 2
    return tuple(out)


@dataclass(frozen=True)
class PullbackDiagnostics:
    """Convergence record of one pull-back run.

    Attributes:
        start_times: −n for each schedule entry
        pair_distances: d-metric between consecutive solutions on the shallower window
        endpoint_gaps: H-distance of consecutive solutions at ``t_end``
        fitted_rate: Slope of log pair distance against n (shallower entry)
        endpoint_rate: Same fit for the endpoint gaps
        converged: Last pair distance below ``tol``
        monotone: Pair distances strictly decreasing
    """

    start_times: List[float]
    pair_distances: List[float]
    endpoint_gaps: List[float]
    fitted_rate: float
    endpoint_rate: float
    converged: bool
    monotone: bool
    tol: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Draws of the stationary solution at a fixed time."""

    values: np.ndarray
    time: float
    eps: float
    seeds: np.ndarray


@dataclass(frozen=True)
class TwoSampleResult:
    statistic: float
    threshold: float
    p_value: float
    p_flag: bool
    n_permutations: int


def _check_same_grid(x: Path, y: Path) -> None:
    gx, gy = x.grid, y.grid
    if gx.dt != gy.dt or gx.offset != gy.offset or gx.n_steps != gy.n_steps:
        raise UsageError("d_metric needs paths on the same grid")


def d_metric(
    x: Path, y: Path, cfg: MetricConfig, space: spectral.GalerkinSpace
) -> float:
    """Truncated path distance between two paths on the same grid."""
    _check_same_grid(x, y)
    diff = x.states - y.states
    h = spectral.h_norm_sq(space, diff)
    v = spectral.v_norm_sq(space, diff)
    times = x.times
    dt = x.grid.dt
    total = 0.0
    for n in range(1, cfg.n_max + 1):
        mask = (times >= -n - 0.5 * dt) & (times <= n + 0.5 * dt)
        if not np.any(mask):
            continue
        weights = np.exp(-cfg.gamma * (n - times[mask])) if cfg.gamma > 0.0 else 1.0
        sup_term = float(np.max(weights * h[mask]))
        integral = float(trapezoid(v[mask], dx=dt)) if mask.sum() > 1 else 0.0
        if cfg.combine == "min":
            bracket = min(1.0, sup_term, integral)
        elif cfg.combine == "sum":
            bracket = min(1.0, sup_term + integral)
        else:
            bracket = min(1.0, sup_term)
        total += 2.0**-n * bracket
    return math.sqrt(total)


def _log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    pts = [(x, math.log(y)) for x, y in zip(xs, ys) if y > 0.0]
    if len(pts) < 2:
        return float("nan")
    fit = stats.linregress([p[0] for p in pts], [p[1] for p in pts])
    return float(fit.slope)


def _require_admissible(model: ModelSpec, eps: float, enforce: bool) -> None:
    framework_check.delta_eps(model, eps)
    if not enforce or eps == 0.0:
        return
    eps_tilde = framework_check.thresholds(model, eps).eps_tilde
    if not eps < eps_tilde:
        raise InadmissibleEpsilonError(
            f"eps={eps:g} is not below eps_tilde={eps_tilde:.6g}; the pull-back "
            f"limit is only guaranteed for eps < eps_tilde"
        )


def pullback(
    model: ModelSpec,
    eps: float,
    xi: np.ndarray,
    cfg: PullbackConfig,
    seed: int,
) -> Tuple[Path, PullbackDiagnostics]:
    """Pull-back approximation of the stationary solution on [−n_last, t_end].

    Raises:
        InadmissibleEpsilonError: δ(ε) ≤ 0, or ε ≥ ε̃ with ``enforce_threshold``
        BlowupError: Propagated from the integrator
    """
    _require_admissible(model, eps, cfg.enforce_threshold)
    xi = model.space.check(xi, "xi")
    deep = TimeGrid(-cfg.n_last, cfg.t_end, cfg.dt)
    noise = brownian(deep, model.noise_consts.u_dim, seed)
    paths: List[Path] = []
    for n in cfg.n_schedule:
        grid = TimeGrid(-n, cfg.t_end, cfg.dt)
        rows = noise.increments[grid.offset - deep.offset :]
        sub = NoisePath(grid, rows, noise.seed)
        paths.append(simulate(model, eps, xi, grid, sub))
    distances, gaps = [], []
    for shallow, deeper in zip(paths, paths[1:]):
        restricted = deeper.window(shallow.grid.t0, cfg.t_end)
        distances.append(d_metric(shallow, restricted, cfg.metric, model.space))
        gap_sq = spectral.h_norm_sq(model.space, deeper.final - shallow.final)
        gaps.append(math.sqrt(float(gap_sq)))
        logger.debug(
            "pull-back from %g vs %g: d=%.6g, endpoint gap=%.6g",
            shallow.grid.t0, deeper.grid.t0, distances[-1], gaps[-1],
        )
    shallow_n = list(cfg.n_schedule[:-1])
    diag = PullbackDiagnostics(
        start_times=[-float(n) for n in cfg.n_schedule],
        pair_distances=distances,
        endpoint_gaps=gaps,
        fitted_rate=_log_slope(shallow_n, distances),
        endpoint_rate=_log_slope(shallow_n, gaps),
        converged=bool(distances) and distances[-1] < cfg.tol,
        monotone=all(b < a for a, b in zip(distances, distances[1:])),
        tol=cfg.tol,
    )
    logger.info(
        "pull-back for %s: %d stages, last distance %.3g, rate %.4g, converged=%s",
        model.name, len(paths), distances[-1] if distances else float("nan"),
        diag.fitted_rate, diag.converged,
    )
    return paths[-1], diag


def _ensemble_at(
    model: ModelSpec,
    eps: float,
    xi: np.ndarray,
    t_start: float,
    times: Sequence[float],
    dt: float,
    seeds: np.ndarray,
) -> Dict[float, np.ndarray]:
    """States of an ensemble started at ``t_start`` recorded at ``times``."""
    t_stop = max(times)
    if t_stop <= t_start:
        return {t: np.broadcast_to(xi, (seeds.size, xi.size)).copy() for t in times}
    grid = TimeGrid(t_start, t_stop, dt)
    wanted = {grid.index_of(t): t for t in times}
    out: Dict[float, np.ndarray] = {}

    def record(i: int, x: np.ndarray) -> None:
        if i in wanted:
            out[wanted[i]] = x.copy()

    simulate_ensemble(model, eps, xi, grid, seeds, observer=record)
    return out


def _draw_seeds(master_seed: int, n_draws: int) -> np.ndarray:
    return rng.derive_seeds(master_seed, n_draws)


def invariant_samples(
    model: ModelSpec,
    eps: float,
    n_draws: int,
    cfg: PullbackConfig,
    master_seed: int,
    xi: Optional[np.ndarray] = None,
    chunk: int = 256,
    workers: Optional[int] = None,
) -> SampleSet:
    """Draws of 𝒴^ε(t_end), one independent pull-back run per draw.

    Each draw is the deepest pull-back solution of its own noise seed; draws are
    computed in chunks on the worker pool and concatenated in seed order.
    """
    if n_draws < 1:
        raise UsageError("n_draws must be at least 1")
    _require_admissible(model, eps, cfg.enforce_threshold)
    xi = model.space.zeros() if xi is None else model.space.check(xi, "xi")
    seeds = _draw_seeds(master_seed, n_draws)
    parts = parallel.map_ordered(
        lambda idx: _ensemble_at(
            model,
            eps,
            xi,
            -cfg.n_last,
            [cfg.t_end],
            cfg.dt,
            seeds[idx.start : idx.stop],
        )[cfg.t_end],
        parallel.chunk_ranges(n_draws, chunk),
        workers,
    )
    values = np.concatenate(parts)
    logger.info("drew %d stationary samples for %s at eps=%g", n_draws, model.name, eps)
    return SampleSet(values=values, time=cfg.t_end, eps=eps, seeds=seeds)


def evolve_samples(
    model: ModelSpec,
    eps: float,
    samples: SampleSet,
    duration: float,
    seed: int,
    dt: float = 1e-3,
) -> SampleSet:
    """Advance every draw by ``duration`` with fresh, independent noise."""
    grid = TimeGrid(samples.time, samples.time + duration, dt)
    seeds = _draw_seeds(seed, len(samples.values))
    k = model.noise_consts.u_dim

    def increments(i: int) -> np.ndarray:
        return rng.brownian_increments(seeds, grid.offset + i, grid.dt, k)

    finals = integrate(model, eps, samples.values, grid, increments, keep_path=False)
    return SampleSet(values=finals, time=grid.t1, eps=eps, seeds=seeds)


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample energy statistic 2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖ (H-norm)."""
    dxy = cdist(x, y).mean()
    dxx = cdist(x, x).mean()
    dyy = cdist(y, y).mean()
    return float(2.0 * dxy - dxx - dyy)


def _stat_from_pooled(dist: np.ndarray, first: np.ndarray) -> float:
    second = ~first
    dxy = dist[np.ix_(first, second)].mean()
    dxx = dist[np.ix_(first, first)].mean()
    dyy = dist[np.ix_(second, second)].mean()
    return float(2.0 * dxy - dxx - dyy)


def two_sample_test(
    x: np.ndarray,
    y: np.ndarray,
    seed: int,
    level: float = 0.01,
    n_permutations: int = 200,
) -> TwoSampleResult:
    """Energy-distance test with a pooled permutation threshold at ``level``.

    ``p_flag`` is true when equality of the two laws is not rejected.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise UsageError("samples live in different dimensions")
    statistic = energy_distance(x, y)
    pooled = np.concatenate([x, y])
    dist = cdist(pooled, pooled)
    n_total, n_x = pooled.shape[0], x.shape[0]
    rows = np.arange(n_total, dtype=np.int64)
    perm_stats = np.empty(n_permutations)
    for b in range(n_permutations):
        keys = rng.uniform(seed, rng.STREAM_STATES, _PERMUTATION_LEVEL, b, rows)
        first = np.zeros(n_total, dtype=bool)
        first[np.argsort(keys, kind="stable")[:n_x]] = True
        perm_stats[b] = _stat_from_pooled(dist, first)
    exceed = int(np.sum(perm_stats >= statistic))
    p_value = (1.0 + exceed) / (1.0 + n_permutations)
    threshold = float(np.quantile(perm_stats, 1.0 - level))
    return TwoSampleResult(
        statistic=statistic,
        threshold=threshold,
        p_value=p_value,
        p_flag=bool(p_value > level),
        n_permutations=n_permutations,
    )


def stationarity_test(
    model: ModelSpec,
    eps: float,
    times: Tuple[float, float],
    n_draws: int,
    seed: int,
    cfg: Optional[PullbackConfig] = None,
    transient_xi: Optional[np.ndarray] = None,
    level: float = 0.01,
    n_permutations: int = 200,
) -> TwoSampleResult:
    """Compare the laws of 𝒴^ε(t_a) and 𝒴^ε(t_b).

    The two sample sets come from disjoint pull-back runs, ``n_draws`` each,
    started at −n_last from zero, so the samples are independent. With
    ``transient_xi`` the runs instead start at min(t_a, t_b) from that state,
    with no pull-back.
    """
    cfg = cfg or PullbackConfig()
    t_a, t_b = float(times[0]), float(times[1])
    seeds = _draw_seeds(seed, 2 * n_draws)
    if transient_xi is None:
        _require_admissible(model, eps, cfg.enforce_threshold)
        xi = model.space.zeros()
        t_start = -float(cfg.n_last)
    else:
        framework_check.delta_eps(model, eps)
        xi = model.space.check(transient_xi, "transient_xi")
        t_start = min(t_a, t_b)
    if min(t_a, t_b) < t_start:
        raise UsageError("test times lie before the pull-back horizon")
    draws = _ensemble_at(model, eps, xi, t_start, sorted({t_a, t_b}), cfg.dt, seeds)
    result = two_sample_test(
        draws[t_a][:n_draws],
        draws[t_b][n_draws:],
        rng.derive_seed(seed, 7),
        level,
        n_permutations,
    )
    logger.info(
        "stationarity test %s at (%g, %g): statistic %.4g, p=%.3g, pass=%s",
        model.name, t_a, t_b, result.statistic, result.p_value, result.p_flag,
    )
    return result


def stationary_moment_check(
    model: ModelSpec, eps: float, delta: float, samples: SampleSet
) -> Dict[str, Any]:
    """E exp{δ‖𝒴^ε‖²_H} from samples against 2·exp{2δC_{A,ρ,ε}/(λ₁γ₀)}."""
    if not delta > 0.0:
        raise UsageError("delta must be positive")
    c = framework_check.c_a_rho_eps(model, eps)
    lam, g0 = model.space.lambda1, model.mono.gamma0
    h = spectral.h_norm_sq(model.space, samples.values)
    with np.errstate(over="ignore"):
        values = np.exp(delta * h)
    estimate = float(np.mean(values))
    stderr = 0.0
    if values.size > 1:
        stderr = float(np.std(values, ddof=1) / math.sqrt(values.size))
    bound = 2.0 * math.exp(2.0 * delta * c / (lam * g0))
    return {
        "delta": delta,
        "estimate": estimate,
        "stderr": stderr,
        "bound": bound,
        "passed": bool(estimate <= bound),
    }
