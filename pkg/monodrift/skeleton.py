"""
Skeleton equation, Cameron-Martin action and rate functions by optimal control.

The skeleton dX = A⁰(X)dt + B(X)v dt is discretised with the same semi-implicit
step as the stochastic equation. Rate functions are evaluated as penalised
control problems

    J(v) = ½ Σ_n dt‖v_n‖²_U + μ · (endpoint or path-tracking penalty)

minimised with L-BFGS-B over an increasing μ schedule. Gradients come from the
exact discrete adjoint of the forward scheme.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from monodrift import spectral
from monodrift.integrator import Control, Path, TimeGrid, control_rows, integrate
from monodrift.models import ModelSpec
from monodrift.stationary import MetricConfig, PullbackDiagnostics, _log_slope, d_metric
from monodrift.utils import parallel, rng
from monodrift.utils.error_handling import UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "Control",
    "RateOptions",
    "RateResult",
    "action",
    "adjoint_gradient",
    "contraction_check",
    "quasipotential_crosscheck",
    "rate_endpoint",
    "rate_path",
    "skeleton_lipschitz_probe",
    "skeleton_pullback",
    "skeleton_solve",
]


@dataclass(frozen=True)
class RateOptions:
    """Optimizer settings.

    Attributes:
        mu_schedule: Penalty weights, solved in order with warm starts
        max_iter: L-BFGS-B iteration cap per μ stage
        memory: Number of stored correction pairs
        gtol: Projected-gradient tolerance per stage
        gap_tol: Largest endpoint (or path) gap accepted as converged
    """

    mu_schedule: Tuple[float, ...] = (10.0, 100.0, 1000.0)
    max_iter: int = 500
    memory: int = 10
    gtol: float = 1e-10
    gap_tol: float = 1e-2

    def __post_init__(self) -> None:
        if not self.mu_schedule or any(mu <= 0.0 for mu in self.mu_schedule):
            raise UsageError("mu_schedule must contain positive weights")
        if self.max_iter < 1:
            raise UsageError("max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class RateResult:
    """Outcome of a rate-function optimisation.

    Attributes:
        value: Action ½∫‖v*‖²_U of the returned control
        control: Optimal control found
        endpoint_gap: H-distance between the achieved and the target endpoint
            (RMS path distance for path targets)
        iterations: Total L-BFGS-B iterations over all stages
        converged: Last stage succeeded and the gap is within ``gap_tol``
        trace: Objective value after each accepted iteration
        stages: Per-stage μ, iterations, objective and optimizer message
    """

    value: float
    control: Control
    endpoint_gap: float
    iterations: int
    converged: bool
    trace: List[float]
    stages: List[Dict[str, Any]] = field(default_factory=list)
    path: Optional[Path] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "endpoint_gap": self.endpoint_gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": list(self.trace),
            "stages": list(self.stages),
            "t0": self.control.grid.t0,
            "t1": self.control.grid.t1,
            "dt": self.control.grid.dt,
        }


def action(control: Control) -> float:
    """½ Σ_n dt ‖v_n‖²_U."""
    return 0.5 * control.grid.dt * float(np.sum(control.values**2))


def skeleton_solve(
    model: ModelSpec, xi: np.ndarray, grid: TimeGrid, control: Optional[Control]
) -> Path:
    """Integrate the skeleton equation (ε = 0, no noise) under ``control``."""
    xi = model.space.check(xi, "xi")
    if control is not None and control.u_dim != model.noise_consts.u_dim:
        raise UsageError(
            f"control has {control.u_dim} columns, noise has {model.noise_consts.u_dim}"
        )
    states = integrate(model, 0.0, xi, grid, None, control_rows(control, grid))
    return Path(grid, states)


def _restrict_control(control: Optional[Control], grid: TimeGrid, k: int) -> Control:
    """Control on ``grid``, zero outside the support of ``control``."""
    values = np.zeros((grid.n_steps, k))
    if control is not None:
        if abs(control.grid.dt - grid.dt) > 1e-15:
            raise UsageError("control and pull-back grids need the same dt")
        lo = max(grid.offset, control.grid.offset)
        hi = min(grid.offset + grid.n_steps, control.grid.offset + control.grid.n_steps)
        if hi > lo:
            values[lo - grid.offset : hi - grid.offset] = control.values[
                lo - control.grid.offset : hi - control.grid.offset
            ]
    return Control(grid, values)


def skeleton_pullback(
    model: ModelSpec,
    control: Optional[Control],
    schedule: Sequence[int],
    t_end: float = 0.0,
    dt: float = 1e-3,
    xi: Optional[np.ndarray] = None,
    tol: float = 1e-4,
    metric: Optional[MetricConfig] = None,
) -> Tuple[Path, PullbackDiagnostics]:
    """Pull-back limit 𝒴^{0,v} of the skeleton equation.

    Each run starts at −n from ``xi`` (default zero); the control is taken as
    zero outside its own grid.
    """
    schedule = tuple(int(n) for n in schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise UsageError("schedule must be a nonempty increasing sequence")
    metric = metric or MetricConfig()
    x0 = model.space.zeros() if xi is None else model.space.check(xi, "xi")
    k = model.noise_consts.u_dim
    paths = []
    for n in schedule:
        grid = TimeGrid(-n, t_end, dt)
        restricted = _restrict_control(control, grid, k)
        paths.append(skeleton_solve(model, x0, grid, restricted))
    distances, gaps = [], []
    for shallow, deeper in zip(paths, paths[1:]):
        restricted = deeper.window(shallow.grid.t0, t_end)
        distances.append(d_metric(shallow, restricted, metric, model.space))
        gap = spectral.h_norm_sq(model.space, deeper.final - shallow.final)
        gaps.append(math.sqrt(float(gap)))
    shallow_n = list(schedule[:-1])
    diag = PullbackDiagnostics(
        start_times=[-float(n) for n in schedule],
        pair_distances=distances,
        endpoint_gaps=gaps,
        fitted_rate=_log_slope(shallow_n, distances),
        endpoint_rate=_log_slope(shallow_n, gaps),
        converged=bool(distances) and distances[-1] < tol,
        monotone=all(b < a for a, b in zip(distances, distances[1:])),
        tol=tol,
    )
    return paths[-1], diag


def _adjoint(
    model: ModelSpec,
    grid: TimeGrid,
    states: np.ndarray,
    values: np.ndarray,
    sources: np.ndarray,
) -> np.ndarray:
    """Gradient of Σ_n ⟨sources_n, x_n⟩-linearised objective w.r.t. control rows.

    ``sources[n]`` is ∂(penalty)/∂x_n for n = 0..n_steps. Returns the gradient of
    the penalty part with respect to v_n (without the action term).
    """
    dt = grid.dt
    d = model.linear_diag
    dinv = 1.0 / (1.0 + dt * d)
    n = grid.n_steps
    grad = np.empty_like(values)
    noise = model.noise
    drift = model.drift
    if drift.is_linear and noise.is_additive and not np.any(sources[:-1]):
        # λ_{n+1} = dinv^{n_steps-1-n} λ_N, all steps at once
        powers = np.arange(n - 1, -1, -1, dtype=np.float64)[:, None]
        lam_next = sources[-1][None, :] * dinv[None, :] ** powers
        b = noise(states[0])
        return dt * (lam_next * dinv[None, :]) @ b
    lam = sources[-1].copy()
    eye = np.eye(model.space.dim)
    for i in range(n - 1, -1, -1):
        x, v = states[i], values[i]
        scaled = dinv * lam
        grad[i] = dt * (noise(x).T @ scaled)
        jac = eye + dt * (drift.jacobian(0.0, x) + np.diag(d))
        jac = jac + dt * noise.apply_jacobian(x, v)
        lam = jac.T @ scaled + sources[i]
    return grad


def adjoint_gradient(
    model: ModelSpec,
    xi: np.ndarray,
    grid: TimeGrid,
    control: Control,
    target: np.ndarray,
    mu: float,
) -> np.ndarray:
    """Exact gradient of J(v) = action(v) + μ‖X_v(t₁) − target‖²_H.

    Returns:
        Array shaped like ``control.values``
    """
    if not mu > 0.0:
        raise UsageError("mu must be positive")
    target = model.space.check(target, "target")
    path = skeleton_solve(model, xi, grid, control)
    sources = np.zeros_like(path.states)
    sources[-1] = 2.0 * mu * (path.final - target)
    values = control_rows(control, grid)
    return grid.dt * values + _adjoint(model, grid, path.states, values, sources)


class _Problem:
    """Penalised objective in the scaled variable w = √dt · v."""

    def __init__(self, model, xi, grid, targets, node_weights):
        self.model = model
        self.xi = xi
        self.grid = grid
        self.targets = targets
        self.node_weights = node_weights
        self.k = model.noise_consts.u_dim
        self.mu = 1.0
        self.last = math.nan

    def unpack(self, w: np.ndarray) -> np.ndarray:
        return w.reshape(self.grid.n_steps, self.k) / math.sqrt(self.grid.dt)

    def penalty_terms(self, states: np.ndarray):
        diff = states - self.targets
        sq = spectral.h_norm_sq(self.model.space, diff)
        return diff, float(np.sum(self.node_weights * sq))

    def __call__(self, w: np.ndarray):
        values = self.unpack(w)
        states = integrate(self.model, 0.0, self.xi, self.grid, None, values)
        diff, penalty = self.penalty_terms(states)
        obj = 0.5 * float(w @ w) + self.mu * penalty
        sources = 2.0 * self.mu * self.node_weights[:, None] * diff
        grad_v = _adjoint(self.model, self.grid, states, values, sources)
        grad = w + grad_v.reshape(-1) / math.sqrt(self.grid.dt)
        self.last = obj
        return obj, grad


def _optimise(problem: _Problem, opts: RateOptions, gap_of) -> RateResult:
    grid = problem.grid
    w = np.zeros(grid.n_steps * problem.k)
    trace: List[float] = []
    stages = []
    iterations = 0
    success = False
    for mu in opts.mu_schedule:
        problem.mu = mu
        start = len(trace)
        res = minimize(
            problem,
            w,
            jac=True,
            method="L-BFGS-B",
            callback=lambda _: trace.append(problem.last),
            options={
                "maxiter": opts.max_iter,
                "maxcor": opts.memory,
                "gtol": opts.gtol,
                "ftol": 1e-15,
            },
        )
        w = res.x
        iterations += int(res.nit)
        success = bool(res.success)
        stages.append(
            {
                "mu": mu,
                "iterations": int(res.nit),
                "objective": float(res.fun),
                "success": success,
                "message": str(res.message),
                "trace_start": start,
            }
        )
        logger.debug(
            "rate stage mu=%g: J=%.10g after %d iterations", mu, res.fun, res.nit
        )
    control = Control(grid, problem.unpack(w))
    path = skeleton_solve(problem.model, problem.xi, grid, control)
    gap = gap_of(path)
    value = action(control)
    converged = success and gap <= opts.gap_tol
    logger.info(
        "rate optimisation: value %.6g, gap %.3g, %d iterations, converged=%s",
        value, gap, iterations, converged,
    )
    return RateResult(
        value=value,
        control=control,
        endpoint_gap=gap,
        iterations=iterations,
        converged=converged,
        trace=trace,
        stages=stages,
        path=path,
    )


def rate_endpoint(
    model: ModelSpec,
    xi: np.ndarray,
    t0: float,
    t1: float,
    target: np.ndarray,
    opts: Optional[RateOptions] = None,
    dt: float = 1e-3,
) -> RateResult:
    """Minimal action steering the skeleton from ``xi`` at t0 to ``target`` at t1.

    With ``xi = 0``, ``t0 = −T_back`` and ``t1 = 0`` this approximates the
    quasi-potential of ``target``. An unreachable target gives a large gap and
    ``converged = False`` (the infimum over an empty set is +∞).
    """
    opts = opts or RateOptions()
    xi = model.space.check(xi, "xi")
    target = model.space.check(target, "target")
    grid = TimeGrid(t0, t1, dt)
    targets = np.zeros((grid.n_steps + 1, model.space.dim))
    targets[-1] = target
    weights = np.zeros(grid.n_steps + 1)
    weights[-1] = 1.0
    problem = _Problem(model, xi, grid, targets, weights)

    def gap(path: Path) -> float:
        return math.sqrt(float(spectral.h_norm_sq(model.space, path.final - target)))

    return _optimise(problem, opts, gap)


def rate_path(
    model: ModelSpec,
    xi: np.ndarray,
    target_path: Path,
    opts: Optional[RateOptions] = None,
) -> RateResult:
    """Action needed to follow ``target_path``, by a tracking penalty μ∫‖X − Φ‖²_H.

    The reported gap is the RMS H-distance between skeleton and target path.
    """
    opts = opts or RateOptions()
    xi = model.space.check(xi, "xi")
    grid = target_path.grid
    targets = model.space.check(target_path.states, "target path")
    weights = np.full(grid.n_steps + 1, grid.dt)
    weights[0] = 0.0
    problem = _Problem(model, xi, grid, targets, weights)
    span = grid.t1 - grid.t0

    def gap(path: Path) -> float:
        sq = spectral.h_norm_sq(model.space, path.states - targets)
        return math.sqrt(float(np.sum(weights * sq)) / span)

    return _optimise(problem, opts, gap)


def contraction_check(
    model: ModelSpec,
    target: np.ndarray,
    opts: Optional[RateOptions] = None,
    t_back: float = 5.0,
    dt: float = 1e-2,
    amplitudes: Sequence[float] = (0.0, 0.1, -0.1),
) -> Dict[str, Any]:
    """Endpoint rate against path rates of a family of paths ending at ``target``.

    The family is the optimal skeleton path plus ``a·sin(πs)·φ/‖φ‖_H`` for each
    amplitude ``a`` (s the relative time), so every member starts at zero and
    ends at ``target``. Its minimal path rate should match the endpoint rate.
    """
    opts = opts or RateOptions()
    space = model.space
    target = space.check(target, "target")
    xi = space.zeros()
    base = rate_endpoint(model, xi, -t_back, 0.0, target, opts, dt)
    grid = base.path.grid
    norm = math.sqrt(float(spectral.h_norm_sq(space, target)))
    direction = target / norm if norm > 0.0 else space.unit(0)
    s = np.linspace(0.0, 1.0, grid.n_steps + 1)
    bump = np.sin(np.pi * s)[:, None] * direction[None, :]
    results = [
        rate_path(model, xi, Path(grid, base.path.states + a * bump), opts)
        for a in amplitudes
    ]
    rates = [r.value for r in results]
    best = min(rates)
    diff = abs(best - base.value) / base.value if base.value > 0.0 else math.nan
    logger.info(
        "contraction check: endpoint rate %.6g, best path rate %.6g", base.value, best
    )
    return {
        "endpoint_rate": base.value,
        "amplitudes": list(amplitudes),
        "path_rates": rates,
        "path_gaps": [r.endpoint_gap for r in results],
        "min_path_rate": best,
        "relative_difference": diff,
    }


@dataclass(frozen=True)
class QuasipotentialRow:
    index: int
    rate: float
    reference: float
    ratio: float
    converged: bool
    endpoint_gap: float


def quasipotential_crosscheck(
    model: ModelSpec,
    targets: Sequence[np.ndarray],
    opts: Optional[RateOptions] = None,
    t_back: float = 5.0,
    dt: float = 1e-2,
    workers: Optional[int] = None,
    check_doubling: bool = True,
) -> Dict[str, Any]:
    """Compare computed rates with the reference ‖φ‖²_V on a Navier-Stokes model.

    Returns:
        ``rows`` (per target), ``mean_ratio`` (the reported absolute constant)
        , ``spread`` ((max − min)/mean of the nonzero-target ratios) and
        ``doubling_ratio`` (rate of 2φ over rate of φ for the first nonzero target)

    Raises:
        UsageError: Not a Navier-Stokes model with additive noise on every mode
    """
    if model.name != "ns2d":
        raise UsageError("the quasi-potential cross-check needs the ns2d model")
    noise = model.noise
    if not noise.is_additive or noise.u_dim != model.space.dim:
        raise UsageError("the cross-check needs additive noise spanning every mode")
    xi = model.space.zeros()

    def one(item):
        i, phi = item
        phi = model.space.check(phi, "target")
        ref = float(spectral.v_norm_sq(model.space, phi))
        res = rate_endpoint(model, xi, -t_back, 0.0, phi, opts, dt)
        ratio = res.value / ref if ref > 0.0 else math.nan
        return QuasipotentialRow(
            i, res.value, ref, ratio, res.converged, res.endpoint_gap
        )

    items = list(enumerate(targets))
    first = next(
        (i for i, phi in items if np.any(np.asarray(phi, dtype=float) != 0.0)), None
    )
    if check_doubling and first is not None:
        items.append((len(items), 2.0 * np.asarray(targets[first], dtype=float)))
    rows = parallel.map_ordered(one, items, workers)
    doubled = rows.pop() if check_doubling and first is not None else None
    ratios = np.array([r.ratio for r in rows if r.reference > 0.0])
    mean = float(np.mean(ratios)) if ratios.size else math.nan
    spread = float((ratios.max() - ratios.min()) / mean) if ratios.size else 0.0
    doubling = doubled.rate / rows[first].rate if doubled is not None else math.nan
    logger.info(
        "quasi-potential cross-check: mean ratio %.6g, spread %.3g, doubling %.4g",
        mean, spread, doubling,
    )
    return {
        "rows": [r.__dict__ for r in rows],
        "mean_ratio": mean,
        "spread": spread,
        "doubling_ratio": doubling,
        "t_back": t_back,
        "dt": dt,
    }


def skeleton_lipschitz_probe(
    model: ModelSpec,
    xi: np.ndarray,
    grid: TimeGrid,
    n_pairs: int = 20,
    scale: float = 1.0,
    perturbation: float = 1e-2,
    seed: int = 0,
) -> Dict[str, Any]:
    """Sampled ratios sup_t‖X_v − X_{v′}‖_H / ‖v − v′‖_{L²} for nearby controls.

    ``v`` is Gaussian with standard deviation ``scale`` per entry and
    v′ = v + perturbation·Z with an independent Gaussian Z.
    """
    if n_pairs < 1:
        raise UsageError("n_pairs must be at least 1")
    k = model.noise_consts.u_dim
    steps = np.arange(grid.n_steps, dtype=np.int64)[:, None]
    cols = np.arange(k, dtype=np.int64)[None, :]
    ratios = []
    for p in range(n_pairs):
        v = scale * rng.standard_normal(seed, rng.STREAM_CONTROL, 2 * p, steps, cols)
        z = rng.standard_normal(seed, rng.STREAM_CONTROL, 2 * p + 1, steps, cols)
        w = v + perturbation * z
        xv = skeleton_solve(model, xi, grid, Control(grid, v))
        xw = skeleton_solve(model, xi, grid, Control(grid, w))
        sq = spectral.h_norm_sq(model.space, xv.states - xw.states)
        sup = math.sqrt(float(np.max(sq)))
        l2 = math.sqrt(grid.dt * float(np.sum((v - w) ** 2)))
        ratios.append(sup / l2)
    return {
        "n_pairs": n_pairs,
        "ratios": ratios,
        "constant": max(ratios),
        "scale": scale,
        "perturbation": perturbation,
        "seed": seed,
    }
