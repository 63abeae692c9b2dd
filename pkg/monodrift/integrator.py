"""
Semi-implicit Euler-Maruyama stepping for the stochastic and controlled equations.

One step maps

    x ↦ (x + dt·N^ε(x) + dt·B(x)v + √ε·B(x)ΔW) / (1 + dt·d)

where ``d`` is the model's diagonal dissipation and ``N^ε = A^ε + d ⊙ x`` the
explicit remainder. Brownian increments are keyed by the absolute step index
``round(t/dt)``, so any two runs sharing a seed and a step size see identical
noise on their common time window. Ensembles advance all draws at once as a
``(draws, N)`` array.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from monodrift import framework_check, spectral
from monodrift.models import ModelSpec
from monodrift.utils import rng
from monodrift.utils.error_handling import BlowupError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0 + dt, ..., t1.

    Attributes:
        t0: Start time
        t1: End time
        dt: Step size
        n_steps: Number of steps, round((t1 − t0)/dt)
        offset: Absolute index round(t0/dt) of the first node
    """

    t0: float
    t1: float
    dt: float = DEFAULT_DT
    n_steps: int = field(init=False)
    offset: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise UsageError("dt must be positive")
        if not self.t1 > self.t0:
            raise UsageError(f"grid needs t1 > t0, got [{self.t0}, {self.t1}]")
        span = self.t1 - self.t0
        n = int(round(span / self.dt))
        if n < 1 or abs(n * self.dt - span) > 1e-12 * max(1.0, abs(span)):
            raise UsageError(
                f"dt={self.dt:g} does not divide the interval [{self.t0}, {self.t1}]"
            )
        object.__setattr__(self, "n_steps", n)
        object.__setattr__(self, "offset", int(round(self.t0 / self.dt)))

    @property
    def times(self) -> np.ndarray:
        """Node times (absolute step index × dt)."""
        return (self.offset + np.arange(self.n_steps + 1)) * self.dt

    def index_of(self, t: float) -> int:
        """Local node index of time ``t``."""
        i = int(round(t / self.dt)) - self.offset
        if not 0 <= i <= self.n_steps:
            raise UsageError(f"time {t} lies outside [{self.t0}, {self.t1}]")
        return i


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian increments on a grid, one row per step."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int
    refinement: int = 0

    def __post_init__(self) -> None:
        if self.increments.shape[0] != self.grid.n_steps:
            raise UsageError("noise path has the wrong number of rows")


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control on a grid, one row per step (U-coefficients)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.grid.n_steps:
            raise UsageError(
                f"control values have shape {values.shape}, expected "
                f"({self.grid.n_steps}, K)"
            )
        if not np.all(np.isfinite(values)):
            raise UsageError("control values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def u_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, u_dim: int) -> "Control":
        return cls(grid, np.zeros((grid.n_steps, u_dim)))


@dataclass(frozen=True, eq=False)
class Path:
    """Trajectory on a grid: ``states`` has shape (n_steps + 1, N)."""

    grid: TimeGrid
    states: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def window(self, t_start: float, t_end: float) -> "Path":
        """Restriction to [t_start, t_end] (node-aligned)."""
        i0 = self.grid.index_of(t_start)
        i1 = self.grid.index_of(t_end)
        sub = TimeGrid(t_start, t_end, self.grid.dt)
        return Path(sub, self.states[i0 : i1 + 1])


@dataclass(frozen=True, eq=False)
class EnergySeries:
    """Energy functionals along a path (cumulative ones by trapezoid rule)."""

    times: np.ndarray
    h_sq: np.ndarray
    v_sq_int: np.ndarray
    h_beta_v_int: np.ndarray
    h_2beta: np.ndarray


@dataclass(frozen=True)
class BoundLine:
    name: str
    estimate: float
    stderr: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class ExponentialReport:
    """Monte Carlo estimates of the energy and exponential-moment bounds."""

    eps: float
    gamma: float
    delta: float
    n_paths: int
    seed: int
    c_a_rho_eps: float
    slack: float
    lines: List[BoundLine]

    @property
    def all_passed(self) -> bool:
        return all(line.passed for line in self.lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "gamma": self.gamma,
            "delta": self.delta,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "c_a_rho_eps": self.c_a_rho_eps,
            "slack": self.slack,
            "all_passed": self.all_passed,
            "lines": [line.__dict__ for line in self.lines],
        }


def brownian(grid: TimeGrid, k: int, seed: int, refinement: int = 0) -> NoisePath:
    """Brownian increments N(0, dt) keyed by (seed, absolute step, column).

    With ``refinement = r`` the increments are bridge refinements of a lattice of
    width ``dt·2^r``, so summing consecutive blocks of ``2^r`` rows reproduces the
    path generated on the coarse lattice.
    """
    if k < 1:
        raise UsageError("noise dimension K must be at least 1")
    steps = grid.offset + np.arange(grid.n_steps, dtype=np.int64)
    inc = rng.brownian_increments(seed, steps, grid.dt, k, refinement)
    return NoisePath(grid, inc, int(seed), refinement)


def step(
    model: ModelSpec,
    eps: float,
    x: np.ndarray,
    dt: float,
    dw_row: Optional[np.ndarray] = None,
    v_row: Optional[np.ndarray] = None,
    step_index: int = 0,
    time: float = 0.0,
) -> np.ndarray:
    """One semi-implicit step for a state or a stack of states.

    Raises:
        BlowupError: A coefficient of the result is not finite
    """
    rhs = x + dt * model.drift.nonlinear(eps, x)
    if v_row is not None:
        rhs = rhs + dt * model.noise.apply(x, v_row)
    if dw_row is not None and eps > 0.0:
        rhs = rhs + math.sqrt(eps) * model.noise.apply(x, dw_row)
    with np.errstate(over="ignore", invalid="ignore"):
        out = rhs / (1.0 + dt * model.linear_diag)
    if not np.all(np.isfinite(out)):
        raise BlowupError(step_index, time)
    return out


def control_rows(control: Optional[Control], grid: TimeGrid) -> Optional[np.ndarray]:
    """Control value per state step.

    A control on a coarser grid is repeated; one on a finer grid is averaged over
    each state step (the exact integral of a piecewise-constant control).
    """
    if control is None:
        return None
    cg = control.grid
    if abs(cg.t0 - grid.t0) > 1e-12 or abs(cg.t1 - grid.t1) > 1e-12:
        raise UsageError("control grid must cover the state grid exactly")
    n, m = grid.n_steps, cg.n_steps
    if m == n:
        return control.values
    if m > n and m % n == 0:
        return control.values.reshape(n, m // n, -1).mean(axis=1)
    if n % m == 0:
        return np.repeat(control.values, n // m, axis=0)
    raise UsageError("control grid and state grid are not nested")


def _check_eps(model: ModelSpec, eps: float) -> None:
    if eps > 0.0:
        framework_check.delta_eps(model, eps)
    elif eps < 0.0:
        raise UsageError("eps must be nonnegative")


def integrate(
    model: ModelSpec,
    eps: float,
    x0: np.ndarray,
    grid: TimeGrid,
    increments: Optional[Callable[[int], np.ndarray]] = None,
    controls: Optional[np.ndarray] = None,
    keep_path: bool = True,
    observer: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Advance ``x0`` (N,) or (P, N) over ``grid``.

    Args:
        model: Model to integrate
        eps: Noise intensity
        x0: Initial state(s)
        grid: Time grid
        increments: Maps a local step index to its Brownian increments
        controls: Control rows, one per step (shared by all draws)
        keep_path: Return every node instead of only the final state
        observer: Called as ``observer(i, x)`` at every node i = 0..n_steps

    Returns:
        (n_steps + 1, ...) stack of states, or the final state(s)
    """
    x = np.array(x0, dtype=np.float64)
    model.space.check(x, "initial state")
    states = [x] if keep_path else None
    if observer is not None:
        observer(0, x)
    dt = grid.dt
    for i in range(grid.n_steps):
        dw = increments(i) if increments is not None else None
        v = controls[i] if controls is not None else None
        x = step(model, eps, x, dt, dw, v, i, grid.t0 + i * dt)
        if keep_path:
            states.append(x)
        if observer is not None:
            observer(i + 1, x)
    return np.stack(states) if keep_path else x


def simulate(
    model: ModelSpec,
    eps: float,
    xi: np.ndarray,
    grid: TimeGrid,
    noise: Optional[NoisePath] = None,
    control: Optional[Control] = None,
) -> Path:
    """Solve the (controlled) equation from ``xi`` at ``grid.t0``.

    Raises:
        InadmissibleEpsilonError: δ(ε) ≤ 0
        BlowupError: Nonfinite state, with step index and time
    """
    _check_eps(model, eps)
    xi = model.space.check(xi, "xi")
    if noise is not None:
        if noise.grid.n_steps != grid.n_steps or noise.grid.dt != grid.dt:
            raise UsageError("noise path grid does not match the state grid")
        if noise.increments.shape[1] != model.noise_consts.u_dim:
            raise UsageError("noise path has the wrong number of columns")
    inc = None if noise is None else (lambda i: noise.increments[i])
    states = integrate(model, eps, xi, grid, inc, control_rows(control, grid))
    return Path(grid, states)


def simulate_ensemble(
    model: ModelSpec,
    eps: float,
    xi: np.ndarray,
    grid: TimeGrid,
    seeds: Sequence[int],
    refinement: int = 0,
    control: Optional[Control] = None,
    keep_path: bool = False,
    observer: Optional[Callable[[int, np.ndarray], None]] = None,
) -> np.ndarray:
    """Advance one draw per seed, all at once.

    Draw ``p`` sees the increments :func:`brownian` would give for ``seeds[p]``.

    Returns:
        Final states (P, N), or (n_steps + 1, P, N) with ``keep_path``
    """
    _check_eps(model, eps)
    seeds = np.asarray(seeds, dtype=np.uint64)
    xi = model.space.check(xi, "xi")
    x0 = np.broadcast_to(xi, (seeds.size, model.space.dim)).copy()
    k = model.noise_consts.u_dim

    def increments(i: int) -> np.ndarray:
        return rng.brownian_increments(
            seeds, grid.offset + i, grid.dt, k, refinement
        )

    return integrate(
        model, eps, x0, grid, increments, control_rows(control, grid),
        keep_path, observer,
    )


def energy_series(model: ModelSpec, path: Path) -> EnergySeries:
    """‖X‖²_H, ∫‖X‖²_V, ∫‖X‖^β_H‖X‖²_V and ‖X‖^{2+β}_H along ``path``."""
    space = model.space
    beta = model.mono.beta
    h = spectral.h_norm_sq(space, path.states)
    v = spectral.v_norm_sq(space, path.states)
    dt = path.grid.dt
    return EnergySeries(
        times=path.times,
        h_sq=h,
        v_sq_int=cumulative_trapezoid(v, dx=dt, initial=0.0),
        h_beta_v_int=cumulative_trapezoid(h ** (beta / 2.0) * v, dx=dt, initial=0.0),
        h_2beta=h ** (1.0 + beta / 2.0),
    )


class _EnergyTracker:
    """Streaming node-sup functionals of the exponential estimates."""

    def __init__(self, model, grid, gamma, rate, n_draws, i_mid):
        self.space = model.space
        self.beta = model.mono.beta
        self.gamma0 = model.mono.gamma0
        self.grid = grid
        self.gamma = gamma
        self.rate = rate
        self.i_mid = i_mid
        self.decay = math.exp(-gamma * grid.dt)
        self.weighted = np.zeros(n_draws)
        self.plain = np.zeros(n_draws)
        self.tail = np.zeros(n_draws)
        self.sup_weighted = np.full(n_draws, -np.inf)
        self.sup_exp = np.full(n_draws, -np.inf)
        self.sup_tail = np.zeros(n_draws)
        self.prev = None
        self.final = None

    def __call__(self, i: int, x: np.ndarray) -> None:
        dt = self.grid.dt
        h = spectral.h_norm_sq(self.space, x)
        integrand = h ** (self.beta / 2.0) * spectral.v_norm_sq(self.space, x)
        p_norm = h ** (1.0 + self.beta / 2.0)
        if self.prev is not None:
            self.weighted = self.decay * self.weighted + 0.5 * dt * (
                self.decay * self.prev + integrand
            )
            self.plain = self.plain + 0.5 * dt * (self.prev + integrand)
            if i > self.i_mid:
                self.tail = self.tail + 0.5 * dt * (self.prev + integrand)
        self.prev = integrand
        t_rel = i * dt
        remaining = (self.grid.n_steps - i) * dt
        self.sup_weighted = np.maximum(
            self.sup_weighted,
            math.exp(-self.gamma * remaining) * (p_norm + self.gamma0 * self.weighted),
        )
        self.sup_exp = np.maximum(
            self.sup_exp, p_norm + 0.5 * self.gamma0 * self.plain - self.rate * t_rel
        )
        if i >= self.i_mid:
            t_tail = (i - self.i_mid) * dt
            self.sup_tail = np.maximum(
                self.sup_tail, 0.5 * self.gamma0 * self.tail - self.rate * t_tail
            )
        self.final = p_norm


def _mean_and_stderr(values: np.ndarray):
    n = values.size
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def exponential_report(
    model: ModelSpec,
    eps: float,
    xi: np.ndarray,
    grid: TimeGrid,
    gamma: float,
    delta: float,
    n_paths: int,
    seed: int,
    slack: float = 1.1,
) -> ExponentialReport:
    """Monte Carlo check of the uniform energy and exponential-moment bounds.

    Lines (p = 2 + β, R = (1 + β/2)(C_{A,ρ,ε} + βC_Bε)):

    * ``energy_sup``: E sup_t e^{−γ(T−t)}(‖X‖^p + γ₀∫e^{−γ(t−s)}‖X‖^β‖X‖²_V)
      ≤ 2e^{−γ(T−t₀)}‖ξ‖^p + (2+β)(C_{A,ρ,ε} + (18+10β)C_Bε)/γ
    * ``exp_sup``: E exp{δ sup_t(‖X‖^p + (γ₀/2)∫‖X‖^β‖X‖²_V − R(t−t₀))} ≤ 2e^{δ‖ξ‖^p}
    * ``exp_endpoint``: E exp{δ‖X_T‖^p} ≤ 2e^{δ(‖ξ‖^p + (2+β)(C_{A,ρ,ε}+βC_Bε)/(λ₁γ₀))}
    * ``exp_tail_sup``: the same from the grid midpoint t₁ with δ/2

    Raises:
        UsageError: γ or δ outside the admissible range
    """
    lam = model.space.lambda1
    g0, beta = model.mono.gamma0, model.mono.beta
    cb = model.noise_consts.c_b
    gamma_max = (1.0 + beta) * lam * g0 / 2.0
    if not 0.0 < gamma <= gamma_max:
        raise UsageError(f"gamma must lie in (0, {gamma_max:.6g}]")
    if eps > 0.0:
        delta_max = (1.0 + beta) * lam * g0 / (2.0 * (2.0 + beta) ** 2 * cb * eps)
        strict = beta == 0.0
        if not delta > 0.0 or delta > delta_max or (strict and delta >= delta_max):
            raise UsageError(f"delta must lie in (0, {delta_max:.6g})")
    elif not delta > 0.0:
        raise UsageError("delta must be positive")
    if n_paths < 2:
        raise UsageError("n_paths must be at least 2")
    c = framework_check.c_a_rho_eps(model, eps)
    xi = model.space.check(xi, "xi")
    xi_p = float(spectral.h_norm_sq(model.space, xi)) ** (1.0 + beta / 2.0)
    rate = (1.0 + beta / 2.0) * (c + beta * cb * eps)
    i_mid = grid.n_steps // 2
    tracker = _EnergyTracker(model, grid, gamma, rate, n_paths, i_mid)
    seeds = rng.derive_seeds(seed, n_paths)
    simulate_ensemble(model, eps, xi, grid, seeds, observer=tracker)
    span = grid.t1 - grid.t0
    shift = (2.0 + beta) * (c + beta * cb * eps) / (lam * g0)
    bounds = {
        "energy_sup": 2.0 * math.exp(-gamma * span) * xi_p
        + (2.0 + beta) * (c + (18.0 + 10.0 * beta) * cb * eps) / gamma,
        "exp_sup": 2.0 * math.exp(delta * xi_p),
        "exp_endpoint": 2.0 * math.exp(delta * (xi_p + shift)),
        "exp_tail_sup": 2.0 * math.exp(delta * (xi_p / 2.0 + shift / 2.0)),
    }
    with np.errstate(over="ignore"):
        samples = {
            "energy_sup": tracker.sup_weighted,
            "exp_sup": np.exp(delta * tracker.sup_exp),
            "exp_endpoint": np.exp(delta * tracker.final),
            "exp_tail_sup": np.exp(0.5 * delta * tracker.sup_tail),
        }
    lines = []
    for name, bound in bounds.items():
        est, err = _mean_and_stderr(samples[name])
        lines.append(BoundLine(name, est, err, bound, bool(est <= slack * bound)))
        logger.debug("%s: estimate %.6g ± %.2g vs bound %.6g", name, est, err, bound)
    report = ExponentialReport(eps, gamma, delta, n_paths, seed, c, slack, lines)
    logger.info(
        "exponential report for %s: %d/%d lines pass",
        model.name, sum(line.passed for line in lines), len(lines),
    )
    return report
