"""
Monte Carlo probes of large-deviation scaling for the stationary law.

Probabilities ν^ε(F) of closed events F are estimated from pull-back draws and
the values −ε log p̂ are extrapolated to ε → 0 by an affine fit in ε, whose
intercept is compared with the rate inf_F I′ computed by the optimal-control
module.

Plain Monte Carlo only. Importance sampling would plug in at
:func:`estimate_probability` by drawing under the optimal control of
:func:`event_rate_reference` and reweighting with the Girsanov density; it is
not implemented.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial

from monodrift import spectral
from monodrift.integrator import TimeGrid, simulate_ensemble
from monodrift.models import ModelSpec
from monodrift.skeleton import RateOptions, rate_endpoint
from monodrift.stationary import PullbackConfig, SampleSet, invariant_samples
from monodrift.utils import rng
from monodrift.utils.error_handling import InsufficientDataError, UsageError

logger = logging.getLogger(__name__)

EVENT_KINDS = ("h_ball_complement", "mode_threshold")


@dataclass(frozen=True)
class EventSpec:
    """Closed event F.

    ``h_ball_complement``: ‖x‖_H ≥ r. ``mode_threshold``: |x_k| ≥ level for the
    coefficient ``mode_index``.
    """

    kind: str
    radius_or_level: float
    mode_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise UsageError(
                f"unknown event kind {self.kind!r}; "
                f"expected one of {', '.join(EVENT_KINDS)}"
            )
        if not self.radius_or_level > 0.0:
            raise UsageError("event radius_or_level must be positive")
        if self.kind == "mode_threshold" and self.mode_index is None:
            raise UsageError("mode_threshold events need a mode_index")

    def contains(self, space: spectral.GalerkinSpace, states: np.ndarray) -> np.ndarray:
        """Membership of each state (boolean array over leading axes)."""
        states = space.check(states, "states")
        if self.kind == "h_ball_complement":
            return spectral.h_norm_sq(space, states) >= self.radius_or_level**2
        if not 0 <= self.mode_index < space.dim:
            raise UsageError(
                f"mode_index {self.mode_index} outside 0..{space.dim - 1}"
            )
        return np.abs(states[..., self.mode_index]) >= self.radius_or_level


class Estimate(NamedTuple):
    p_hat: float
    stderr: float
    hits: int
    n_draws: int

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0


def estimate_from_samples(
    space: spectral.GalerkinSpace, samples: SampleSet, event: EventSpec
) -> Estimate:
    """Hit fraction of ``event`` over given draws, with binomial standard error."""
    hits = int(np.count_nonzero(event.contains(space, samples.values)))
    n = len(samples.values)
    p = hits / n
    return Estimate(p, math.sqrt(p * (1.0 - p) / n), hits, n)


def estimate_probability(
    model: ModelSpec,
    eps: float,
    event: EventSpec,
    n_draws: int,
    pullback_cfg: PullbackConfig,
    seed: int,
    workers: Optional[int] = None,
) -> Estimate:
    """Estimate ν^ε(F) from ``n_draws`` stationary draws.

    Zero hits are returned as p̂ = 0 with ``zero_hits`` set, not raised.
    """
    samples = invariant_samples(
        model, eps, n_draws, pullback_cfg, seed, workers=workers
    )
    est = estimate_from_samples(model.space, samples, event)
    if est.zero_hits:
        logger.warning(
            "no hits for %s at eps=%g over %d draws", event.kind, eps, n_draws
        )
    else:
        logger.debug("eps=%g: p_hat=%.6g ± %.3g", eps, est.p_hat, est.stderr)
    return est


@dataclass(frozen=True)
class ProbeResult:
    """Probabilities over decreasing ε and their extrapolated rate.

    Attributes:
        eps_list: Decreasing noise intensities
        p_hat: Estimates per ε
        stderr: Binomial standard errors per ε
        neg_eps_log_p: −ε log p̂ per ε (inf where p̂ = 0)
        fitted_limit: Intercept of the affine fit in ε (NaN when the fit failed)
        fitted_slope: Slope of that fit
        rate_reference: Computed rate to compare with, if any
        flags: Human-readable notes (zero hits, failed fit)
    """

    eps_list: List[float]
    p_hat: List[float]
    stderr: List[float]
    neg_eps_log_p: List[float]
    fitted_limit: float
    fitted_slope: float
    rate_reference: Optional[float] = None
    hits: List[int] = field(default_factory=list)
    n_draws: List[int] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def relative_error(self) -> float:
        if self.rate_reference is None or not self.rate_reference:
            return math.nan
        return abs(self.fitted_limit - self.rate_reference) / abs(self.rate_reference)

    @property
    def inversions(self) -> int:
        """Steps (in decreasing ε) where −ε log p̂ moves away from the reference."""
        if self.rate_reference is None:
            return 0
        finite = [y for y in self.neg_eps_log_p if math.isfinite(y)]
        dist = [abs(y - self.rate_reference) for y in finite]
        return sum(1 for a, b in zip(dist, dist[1:]) if b > a)

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"eps": e, "p_hat": p, "stderr": s, "neg_eps_log_p": y}
            for e, p, s, y in zip(
                self.eps_list, self.p_hat, self.stderr, self.neg_eps_log_p
            )
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps_list": self.eps_list,
            "p_hat": self.p_hat,
            "stderr": self.stderr,
            "neg_eps_log_p": self.neg_eps_log_p,
            "fitted_limit": self.fitted_limit,
            "fitted_slope": self.fitted_slope,
            "rate_reference": self.rate_reference,
            "relative_error": self.relative_error,
            "inversions": self.inversions,
            "hits": self.hits,
            "n_draws": self.n_draws,
            "flags": self.flags,
        }


def slope_fit(
    eps_list: Sequence[float],
    p_hat: Sequence[float],
    stderr: Optional[Sequence[float]] = None,
    rate_reference: Optional[float] = None,
) -> ProbeResult:
    """Extrapolate −ε log p̂ to ε → 0 by least squares on y = I + b·ε.

    A prefactor c in p = c·e^{−I/ε} shows up as the slope b = −log c.

    Raises:
        InsufficientDataError: Fewer than three positive estimates
    """
    eps = np.asarray(eps_list, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    if eps.shape != p.shape:
        raise UsageError("eps_list and p_hat differ in length")
    if np.any(eps <= 0.0) or np.any((p < 0.0) | (p > 1.0)):
        raise UsageError("eps must be positive and p_hat within [0, 1]")
    order = np.argsort(-eps, kind="stable")
    eps, p = eps[order], p[order]
    if stderr is None:
        err = np.zeros_like(p)
    else:
        err = np.asarray(stderr, dtype=np.float64)[order]
    positive = p > 0.0
    if np.count_nonzero(positive) < 3:
        raise InsufficientDataError(
            f"need at least 3 positive estimates, got {int(np.count_nonzero(positive))}"
        )
    with np.errstate(divide="ignore"):
        y = np.where(positive, -eps * np.log(np.where(positive, p, 1.0)), np.inf)
    intercept, slope = polynomial.polyfit(eps[positive], y[positive], 1)
    flags = [f"zero hits at eps={e:g}" for e in eps[~positive]]
    logger.info("slope fit: limit %.6g (reference %s)", intercept, rate_reference)
    return ProbeResult(
        eps_list=eps.tolist(),
        p_hat=p.tolist(),
        stderr=err.tolist(),
        neg_eps_log_p=y.tolist(),
        fitted_limit=float(intercept),
        fitted_slope=float(slope),
        rate_reference=rate_reference,
        flags=flags,
    )


def probe(
    model: ModelSpec,
    eps_list: Sequence[float],
    event: EventSpec,
    n_draws: int,
    pullback_cfg: PullbackConfig,
    seed: int,
    rate_reference: Optional[float] = None,
    workers: Optional[int] = None,
) -> ProbeResult:
    """Estimate ν^ε(F) over ``eps_list`` and fit the ε → 0 limit.

    Each ε uses its own derived seed. A failed fit (too few positive estimates)
    is reported through ``flags`` with a NaN limit.
    """
    eps_sorted = sorted((float(e) for e in eps_list), reverse=True)
    estimates = [
        estimate_probability(
            model, e, event, n_draws, pullback_cfg, rng.derive_seed(seed, i), workers
        )
        for i, e in enumerate(eps_sorted)
    ]
    p = [est.p_hat for est in estimates]
    se = [est.stderr for est in estimates]
    try:
        result = slope_fit(eps_sorted, p, se, rate_reference)
        flags = result.flags
    except InsufficientDataError as exc:
        logger.warning("probe fit skipped: %s", exc)
        y = [-e * math.log(q) if q > 0.0 else math.inf for e, q in zip(eps_sorted, p)]
        result = ProbeResult(eps_sorted, p, se, y, math.nan, math.nan, rate_reference)
        flags = [f"zero hits at eps={e:g}" for e, q in zip(eps_sorted, p) if q == 0.0]
        flags.append(f"fit failed: {exc}")
    return ProbeResult(
        eps_list=result.eps_list,
        p_hat=result.p_hat,
        stderr=result.stderr,
        neg_eps_log_p=result.neg_eps_log_p,
        fitted_limit=result.fitted_limit,
        fitted_slope=result.fitted_slope,
        rate_reference=rate_reference,
        hits=[est.hits for est in estimates],
        n_draws=[est.n_draws for est in estimates],
        flags=flags,
    )


def initial_condition_sweep(
    model: ModelSpec,
    eps: float,
    event: EventSpec,
    xis: Sequence[np.ndarray],
    horizon: float,
    n_draws: int,
    seed: int,
    dt: float = 1e-3,
) -> List[Dict[str, Any]]:
    """Finite-horizon probabilities P(X^ε_T(ξ) ∈ F) from several initial states.

    All initial states share the same draws, so differences come from ξ alone.
    """
    if not horizon > 0.0:
        raise UsageError("horizon must be positive")
    grid = TimeGrid(0.0, horizon, dt)
    seeds = rng.derive_seeds(seed, n_draws)
    rows = []
    for i, xi in enumerate(xis):
        finals = simulate_ensemble(model, eps, xi, grid, seeds)
        hits = int(np.count_nonzero(event.contains(model.space, finals)))
        p = hits / n_draws
        rows.append(
            {
                "index": i,
                "h_norm": math.sqrt(float(spectral.h_norm_sq(model.space, xi))),
                "p_hat": p,
                "stderr": math.sqrt(p * (1.0 - p) / n_draws),
                "hits": hits,
            }
        )
    return rows


def event_rate_reference(
    model: ModelSpec,
    event: EventSpec,
    opts: Optional[RateOptions] = None,
    t_back: float = 10.0,
    dt: float = 1e-3,
) -> Dict[str, Any]:
    """inf over the event boundary of I′, by a sweep over single-mode targets.

    For a ball complement every ±r·e_k is tried, for a mode threshold ±level on
    the named mode. Exact when the minimiser lies on a coordinate axis (always
    for a single-mode model); an upper estimate otherwise.
    """
    space = model.space
    level = event.radius_or_level
    if event.kind == "h_ball_complement":
        modes = range(space.dim)
    else:
        modes = [event.mode_index]
    xi = space.zeros()
    best: Dict[str, Any] = {"value": math.inf}
    for k in modes:
        for sign in (1.0, -1.0):
            target = space.unit(k, sign * level)
            res = rate_endpoint(model, xi, -t_back, 0.0, target, opts, dt)
            logger.debug("event target mode %d sign %+g: rate %.6g", k, sign, res.value)
            if res.converged and res.value < best["value"]:
                best = {
                    "value": res.value,
                    "mode": k,
                    "sign": sign,
                    "endpoint_gap": res.endpoint_gap,
                }
    if not math.isfinite(best["value"]):
        logger.warning("no event target was reached; the rate reference is +inf")
    return best
