"""
Derived constants, admissibility thresholds and sampled condition audits.

The constants engine turns the declared constants of a :class:`ModelSpec` into
δ(ε), C_{A,ρ,ε}, γ̃₀ and ε̃ together with the (D1)/(D2) verdicts. The audits
sample states (or pairs of states) in an H-ball and evaluate the [A2]-[A5]
inequalities with the declared constants, recording the worst slack and the
sample that produced it. Sample ``i`` depends only on ``(seed, i)``, so a larger
audit replays a smaller one and can only lower the worst margin.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from monodrift import spectral
from monodrift.models import ModelSpec
from monodrift.utils import parallel, rng
from monodrift.utils.error_handling import InadmissibleEpsilonError, UsageError

logger = logging.getLogger(__name__)

CONDITIONS = ("A2", "A3", "A4", "A5")

# relative slack on the [A3] right-hand sides
GROWTH_SLACK = 1e-9

_AUDIT_CHUNK = 2048


@dataclass(frozen=True)
class ConstantsReport:
    """Derived constants at a reference intensity ε₀."""

    eps0: float
    delta_eps: float
    c_a_rho_eps: float
    c_a_rho: float
    gamma_tilde0: float
    eps_tilde: float
    eps_tilde_remark: float
    eps_admissible_max: float
    d1: bool
    d2: bool
    c_rho1: float
    gamma0: float
    lambda1: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AuditReport:
    """Outcome of one sampled condition audit.

    Attributes:
        condition: ``A2``, ``A3``, ``A4`` or ``A5``
        samples: Number of sampled states or pairs
        worst_margin: Smallest slack (rhs − lhs) over all samples and lines
        witness: Line, sample index and states achieving ``worst_margin``
        lines: Worst margin of each checked inequality
        seed: Seed the samples are reproducible from
        radius_h: H-radius of the sampling ball
    """

    condition: str
    samples: int
    worst_margin: float
    witness: Dict[str, Any]
    lines: Dict[str, float]
    seed: int
    radius_h: float

    @property
    def passed(self) -> bool:
        return self.worst_margin >= 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "condition": self.condition,
            "samples": self.samples,
            "worst_margin": self.worst_margin,
            "witness": self.witness,
            "lines": dict(self.lines),
            "seed": self.seed,
            "radius_h": self.radius_h,
        }


@dataclass(frozen=True)
class FitResult:
    """Smallest C_ρ1 consistent with the sampled [A2] inequality."""

    value: float
    witness_index: int
    witness: Dict[str, Any] = field(default_factory=dict)
    samples: int = 0
    seed: int = 0


def delta_eps(model: ModelSpec, eps: float) -> float:
    """δ(ε) = (λ₁γ₀ − C_ρ2 − 2εC_B − ελ₁L_B) / (2λ₁).

    Raises:
        UsageError: Negative ε
        InadmissibleEpsilonError: δ(ε) ≤ 0
    """
    if eps < 0.0:
        raise UsageError("eps must be nonnegative")
    lam = model.space.lambda1
    mono, nc = model.mono, model.noise_consts
    margin = lam * mono.gamma0 - mono.c_rho2 - 2.0 * eps * nc.c_b - eps * lam * nc.l_b
    delta = margin / (2.0 * lam)
    if delta <= 0.0:
        raise InadmissibleEpsilonError(
            f"eps={eps:g} is inadmissible: delta(eps)={delta:.6g} ≤ 0 "
            f"(need eps < {eps_admissible_max(model):.6g})"
        )
    return delta


def eps_admissible_max(model: ModelSpec) -> float:
    """Supremum (λ₁γ₀ − C_ρ2)/(2C_B + λ₁L_B) of intensities with δ(ε) > 0."""
    lam = model.space.lambda1
    nc = model.noise_consts
    return (lam * model.mono.gamma0 - model.mono.c_rho2) / (2.0 * nc.c_b + lam * nc.l_b)


def c_beta(beta: float, lambda1: float) -> float:
    """(2/(2+β)) (β/(λ₁(2+β)))^{β/2}, and 1 at β = 0."""
    if beta == 0.0:
        return 1.0
    return 2.0 / (2.0 + beta) * (beta / (lambda1 * (2.0 + beta))) ** (beta / 2.0)


def c_a_rho_eps(model: ModelSpec, eps: float) -> float:
    """C_{A,ρ,ε} = max{a²/(4δ), C_β δ (a²/(4δ²))^{1+β/2}} + εC_B.

    Here a = ‖A^ε(0)‖_{V*}.
    """
    delta = delta_eps(model, eps)
    a_sq = model.a0_dual_norm**2
    beta = model.mono.beta
    first = a_sq / (4.0 * delta)
    second = c_beta(beta, model.space.lambda1) * delta * (a_sq / (4.0 * delta**2)) ** (
        1.0 + beta / 2.0
    )
    return max(first, second) + eps * model.noise_consts.c_b


def thresholds(model: ModelSpec, eps0: float) -> ConstantsReport:
    """γ̃₀, ε̃ and the (D1)/(D2) verdicts at reference intensity ε₀.

    When (D1) fails no intensity is admissible; the report then carries
    ``d1 = d2 = False`` and NaN constants instead of raising.

    Raises:
        UsageError: C_ρ1 has not been declared or fitted
        InadmissibleEpsilonError: (D1) holds but δ(ε₀) ≤ 0
    """
    mono, nc = model.mono, model.noise_consts
    if mono.c_rho1 is None:
        raise UsageError(
            f"{model.name} has no C_rho1; fit it with resolve_constants first"
        )
    lam, g0, beta = model.space.lambda1, mono.gamma0, mono.beta
    c1, c2, cb = mono.c_rho1, mono.c_rho2, nc.c_b
    d1 = lam * g0 > c2
    remark = _ratio(lam * g0 * g0, 32.0 * c1 * cb)
    remark = min(remark, lam * g0 / 18.0)
    if not d1:
        nan = float("nan")
        logger.warning("(D1) fails for %s: C_rho2=%.6g ≥ λ₁γ₀", model.name, c2)
        return ConstantsReport(
            eps0, nan, nan, nan, max(c2 / lam, 0.0), nan, remark, 0.0,
            False, False, c1, g0, lam,
        )
    delta = delta_eps(model, eps0)
    c_ar = c_a_rho_eps(model, eps0)
    gamma_tilde0 = max(c2 / lam, math.sqrt((4.0 + beta) * c1 * c_ar / lam))
    first = _ratio((1.0 + beta) * lam * g0 * g0, 8.0 * (2.0 + beta) ** 2 * c1 * cb)
    second = (
        g0
        / ((18.0 * g0 + beta * (2.0 + beta) * c1) * cb)
        * (2.0 * lam * g0 - (4.0 + beta) * c1 * c_ar / g0 - c2)
    )
    report = ConstantsReport(
        eps0=eps0,
        delta_eps=delta,
        c_a_rho_eps=c_ar,
        c_a_rho=c_ar,
        gamma_tilde0=gamma_tilde0,
        eps_tilde=min(first, second),
        eps_tilde_remark=remark,
        eps_admissible_max=eps_admissible_max(model),
        d1=d1,
        d2=lam * g0 * g0 > (4.0 + beta) * c1 * c_ar,
        c_rho1=c1,
        gamma0=g0,
        lambda1=lam,
    )
    logger.info(
        "thresholds for %s at eps0=%g: eps_tilde=%.6g gamma_tilde0=%.6g d1=%s d2=%s",
        model.name, eps0, report.eps_tilde, gamma_tilde0, report.d1, report.d2,
    )
    return report


def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        return math.inf
    return num / den


def _pairs(model: ModelSpec, radius_h: float, seed: int, idx: range):
    space = model.space
    v1 = spectral.sample_states(space, radius_h, seed, len(idx), idx.start)
    v2 = spectral.sample_states(
        space, radius_h, rng.derive_seed(seed, 1), len(idx), idx.start
    )
    return v1, v2


def _a2_terms(model: ModelSpec, eps: float, v1: np.ndarray, v2: np.ndarray):
    """(lhs + 2γ₀‖w‖²_V − C_ρ2‖w‖²_H, ρ-weight) of the [A2] inequality."""
    space = model.space
    w = v1 - v2
    da = model.drift(eps, v1) - model.drift(eps, v2)
    db = model.noise(v1) - model.noise(v2)
    lhs = 2.0 * spectral.dual_pair(space, da, w) + eps * np.einsum(
        "...mk,...mk->...", db, db
    )
    w_h = spectral.h_norm_sq(space, w)
    excess = (
        lhs
        + 2.0 * model.mono.gamma0 * spectral.v_norm_sq(space, w)
        - model.mono.c_rho2 * w_h
    )
    h1 = np.sqrt(spectral.h_norm_sq(space, v1))
    weight = (1.0 + h1**model.mono.beta) * spectral.v_norm_sq(space, v1) * w_h
    return excess, weight


def _line_margins(
    model: ModelSpec, eps: float, condition: str, radius_h: float, seed: int, idx: range
) -> Dict[str, np.ndarray]:
    space = model.space
    mono, nc, gc = model.mono, model.noise_consts, model.growth
    v1, v2 = _pairs(model, radius_h, seed, idx)
    out: Dict[str, np.ndarray] = {}
    if condition == "A2":
        excess, weight = _a2_terms(model, eps, v1, v2)
        out["monotonicity"] = mono.c_rho1 * weight - excess
    elif condition == "A3":
        k = 1.0 + GROWTH_SLACK
        h = spectral.h_norm_sq(space, v1)
        v = spectral.v_norm_sq(space, v1)
        bound = k * (nc.c_b * (1.0 + h) + nc.l_b * v)
        out["noise_growth"] = bound - model.noise.hs_norm_sq(v1)
        w = v1 - v2
        db = model.noise(v1) - model.noise(v2)
        lip = nc.c_b * spectral.h_norm_sq(space, w)
        lip = lip + nc.l_b * spectral.v_norm_sq(space, w)
        out["noise_lipschitz"] = k * lip - np.einsum("...mk,...mk->...", db, db)
        growth = (1.0 + v) * (1.0 + np.sqrt(h) ** gc.kappa)
        a_eps = model.drift(eps, v1)
        out["drift_growth"] = k * gc.c_a * growth - spectral.dual_norm_sq(space, a_eps)
        diff = a_eps - model.drift(0.0, v1)
        out["eps_perturbation"] = k * gc.c_a * eps * eps * growth - (
            spectral.dual_norm_sq(space, diff)
        )
    elif condition == "A4":
        h = spectral.h_norm_sq(space, v1)
        proj = np.einsum("...m,...mk->...k", v1, model.noise(v1))
        weight = np.maximum(1.0, np.sqrt(h) ** mono.beta)
        out["state_projection"] = nc.c_b * h - weight * np.sum(proj**2, axis=-1)
        w = v1 - v2
        projw = np.einsum("...m,...mk->...k", w, model.noise(v1) - model.noise(v2))
        w_sq = spectral.h_norm_sq(space, w)
        out["difference_projection"] = nc.c_b * w_sq**2 - np.sum(projw**2, axis=-1)
    else:
        bound = c_a_rho_eps(model, eps)
        h = spectral.h_norm_sq(space, v1)
        energy = (
            2.0 * spectral.dual_pair(space, model.drift(eps, v1), v1)
            + eps * model.noise.hs_norm_sq(v1)
            + mono.gamma0 * spectral.v_norm_sq(space, v1)
        )
        out["coercivity"] = bound - np.maximum(np.sqrt(h) ** mono.beta, 1.0) * energy
    return out


def audit_condition(
    model: ModelSpec,
    eps: float,
    condition: str,
    n_samples: int = 10_000,
    radius_h: float = 2.0,
    rng_seed: int = 0,
    workers: Optional[int] = None,
) -> AuditReport:
    """Evaluate one condition on sampled states with the declared constants.

    Args:
        model: Model under audit
        eps: Noise intensity
        condition: ``A2``, ``A3``, ``A4`` or ``A5``
        n_samples: Number of sampled states (pairs for two-point lines)
        radius_h: H-radius of the sampling ball
        rng_seed: Seed of the sample stream
        workers: Worker count for chunked evaluation

    Returns:
        The audit report

    Raises:
        UsageError: Unknown condition, ``n_samples < 1``, or an [A2] audit of a
            model without C_ρ1
    """
    if condition not in CONDITIONS:
        raise UsageError(
            f"unknown condition {condition!r}; expected one of {', '.join(CONDITIONS)}"
        )
    if n_samples < 1:
        raise UsageError("n_samples must be at least 1")
    if condition == "A2" and model.mono.c_rho1 is None:
        raise UsageError("the [A2] audit needs C_rho1; fit it with resolve_constants")
    chunks = parallel.chunk_ranges(n_samples, _AUDIT_CHUNK)
    parts = parallel.map_ordered(
        lambda idx: _line_margins(model, eps, condition, radius_h, rng_seed, idx),
        chunks,
        workers,
    )
    lines: Dict[str, float] = {}
    worst = (math.inf, "", -1)
    for name in parts[0]:
        margins = np.concatenate([p[name] for p in parts])
        i = int(np.argmin(margins))
        lines[name] = float(margins[i])
        if margins[i] < worst[0]:
            worst = (float(margins[i]), name, i)
    v1, v2 = _pairs(model, radius_h, rng_seed, range(worst[2], worst[2] + 1))
    witness = {
        "line": worst[1],
        "index": worst[2],
        "v1": v1[0].tolist(),
        "v2": v2[0].tolist(),
    }
    report = AuditReport(
        condition=condition,
        samples=n_samples,
        worst_margin=worst[0],
        witness=witness,
        lines=lines,
        seed=rng_seed,
        radius_h=radius_h,
    )
    logger.info(
        "audit %s on %s: worst margin %.6g (%s, sample %d)",
        condition, model.name, worst[0], worst[1], worst[2],
    )
    return report


def fit_c_rho1(
    model: ModelSpec,
    eps: float,
    n_samples: int = 10_000,
    radius_h: float = 2.0,
    rng_seed: int = 0,
    workers: Optional[int] = None,
) -> FitResult:
    """Smallest C_ρ1 making the sampled [A2] inequality hold.

    Uses the same pairs as :func:`audit_condition` with the same seed, so the
    audit of the fitted model passes on that sample.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be at least 1")

    def ratios(idx: range) -> np.ndarray:
        v1, v2 = _pairs(model, radius_h, rng_seed, idx)
        excess, weight = _a2_terms(model, eps, v1, v2)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(excess > 0.0, excess / weight, 0.0)
        return np.where(np.isnan(r), np.inf, r)

    chunks = parallel.chunk_ranges(n_samples, _AUDIT_CHUNK)
    values = np.concatenate(parallel.map_ordered(ratios, chunks, workers))
    i = int(np.argmax(values))
    v1, v2 = _pairs(model, radius_h, rng_seed, range(i, i + 1))
    fitted = float(values[i]) * (1.0 + 1e-12)
    logger.info("fitted C_rho1=%.6g for %s (sample %d)", fitted, model.name, i)
    return FitResult(
        value=fitted,
        witness_index=i,
        witness={"v1": v1[0].tolist(), "v2": v2[0].tolist()},
        samples=n_samples,
        seed=rng_seed,
    )


def resolve_constants(
    model: ModelSpec,
    eps: float,
    n_samples: int = 10_000,
    radius_h: float = 2.0,
    rng_seed: int = 0,
    workers: Optional[int] = None,
) -> Tuple[ModelSpec, Optional[FitResult]]:
    """Return ``model`` with C_ρ1 filled in, fitting it when undeclared."""
    if model.mono.c_rho1 is not None:
        return model, None
    fit = fit_c_rho1(model, eps, n_samples, radius_h, rng_seed, workers)
    return model.with_constants(c_rho1=fit.value), fit


def hemicontinuity_probe(
    model: ModelSpec,
    eps: float,
    v1: np.ndarray,
    v2: np.ndarray,
    v: np.ndarray,
    s_grid: Sequence[float],
) -> np.ndarray:
    """s ↦ ⟨A^ε(v₁ + s v₂), v⟩ on ``s_grid``."""
    space = model.space
    v1 = space.check(v1, "v1")
    v2 = space.check(v2, "v2")
    v = space.check(v, "v")
    s = np.asarray(s_grid, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise UsageError("s_grid must be finite")
    states = v1[None, :] + s[:, None] * v2[None, :]
    drift = model.drift(eps, states)
    return spectral.dual_pair(space, drift, np.broadcast_to(v, states.shape))


def check_all(
    model: ModelSpec,
    eps: float,
    conditions: Sequence[str] = CONDITIONS,
    n_samples: int = 10_000,
    radius_h: float = 2.0,
    rng_seed: int = 0,
    workers: Optional[int] = None,
) -> List[AuditReport]:
    """Run several audits with a shared sample seed."""
    return [
        audit_condition(model, eps, c, n_samples, radius_h, rng_seed, workers)
        for c in conditions
    ]
