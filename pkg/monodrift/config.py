"""
Run configuration: TOML files validated by pydantic models.

Every key has a documented default except ``model``. Validation collects all
problems at once and reports each with its dotted key path and the line of the
key (or of its section header) in the source file.
"""

import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from monodrift import framework_check, spectral
from monodrift.ldp_probe import EVENT_KINDS, EventSpec
from monodrift.models import PRESETS, ModelSpec, build_model
from monodrift.noise import NOISE_KINDS, NoiseSpec, build_noise
from monodrift.skeleton import RateOptions
from monodrift.stationary import METRIC_COMBINE, MetricConfig, PullbackConfig
from monodrift.utils.error_handling import (
    ConfigValidationError,
    InadmissibleEpsilonError,
    MonodriftError,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SCHEMA_FILENAME = "config_schema.json"

_U64_MAX = 2**64 - 1
_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceConfig(_Section):
    """Galerkin space: ``single`` (one mode), ``sine1d`` or ``torus2d``."""

    geometry: Literal["single", "sine1d", "torus2d"] = "sine1d"
    n_modes: int = Field(16, ge=1, description="Number of sine modes")
    k_max: float = Field(2.0, ge=1.0, description="Torus wavevector cutoff |k|")
    alpha: float = Field(1.0, gt=0.0, description="Fractional dissipation exponent")
    weight: float = Field(1.0, gt=0.0, description="V-weight of the single mode")

    def build(self) -> spectral.GalerkinSpace:
        if self.geometry == "single":
            return spectral.single_mode_space(self.weight)
        if self.geometry == "sine1d":
            return spectral.sine_space(self.n_modes, self.alpha)
        return spectral.torus_space(self.k_max, self.alpha)


class ModelParams(_Section):
    chi: float = Field(1.0, gt=0.0, description="Viscosity / relaxation rate")
    alpha: float = Field(1.0, ge=0.0, description="Linear damping of gl1d/reaction1d")
    c: float = Field(1.0, ge=0.0, description="Cubic coefficient of gl1d")
    lipschitz: float = Field(0.5, ge=0.0, description="Amplitude L of L·sin(u)")
    g_coefficients: List[float] = Field(
        default_factory=list, description="a1, a2, a3 of g(u) = a1 u + a2 u² + a3 u³"
    )
    g_lipschitz: float = Field(0.0, ge=0.0, description="Added L·sin(u) in g")
    f_coef: float = Field(0.0, description="Convection coefficient f(u) = f_coef·u")
    forcing: Optional[List[float]] = Field(
        None, description="Constant forcing (linear)"
    )


class NoiseConfig(_Section):
    kind: str = "additive"
    k: Optional[int] = Field(None, ge=1, description="Base noise columns (default N)")
    modes: Optional[List[int]] = None
    amplitudes: Optional[List[float]] = None
    sigma0: float = 1.0
    theta: float = 0.0
    ref_mode: int = 0
    base: str = Field("additive", description="Base kind under kraichnan_overlay")
    q_max: float = 1.0
    field_amplitude: float = 0.1

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, v: str) -> str:
        if v not in NOISE_KINDS:
            raise ValueError(f"expected one of {', '.join(NOISE_KINDS)}")
        return v

    def params(self) -> Dict[str, Any]:
        out = self.model_dump(exclude={"kind"}, exclude_none=True)
        if self.kind != "kraichnan_overlay":
            for key in ("base", "q_max", "field_amplitude"):
                out.pop(key, None)
        return out


class GridConfig(_Section):
    t0: float = 0.0
    t1: float = 1.0
    dt: float = Field(1e-3, gt=0.0)
    xi: Optional[List[float]] = Field(None, description="Initial state coefficients")
    xi_scale: float = Field(
        0.5, description="Amplitude on mode 0 when no initial state is given"
    )


class AuditConfig(_Section):
    conditions: List[Literal["A2", "A3", "A4", "A5"]] = ["A2", "A3", "A4", "A5"]
    n_samples: int = Field(10_000, ge=1)
    radius_h: float = Field(2.0, gt=0.0)
    eps0: Optional[float] = Field(None, ge=0.0, description="Threshold reference ε₀")


class EstimatesConfig(_Section):
    gamma: Optional[float] = Field(
        None, gt=0.0, description="Default: largest admissible"
    )
    delta: Optional[float] = Field(
        None, gt=0.0, description="Default: half the largest"
    )
    n_paths: int = Field(200, ge=2)
    slack: float = Field(1.1, ge=1.0)


class PullbackSection(_Section):
    n_schedule: List[int] = [2, 4, 8, 16]
    t_end: float = 0.0
    dt: float = Field(1e-3, gt=0.0)
    tol: float = Field(1e-4, gt=0.0)
    n_draws: int = Field(400, ge=2, description="Stationary draws for invariant")
    times: List[float] = Field([0.0, 1.0], description="Stationarity test times")
    level: float = Field(0.01, gt=0.0, lt=1.0)
    n_permutations: int = Field(200, ge=1)
    moment_delta: Optional[float] = Field(None, gt=0.0)

    @field_validator("n_schedule")
    @classmethod
    def _increasing(cls, v: List[int]) -> List[int]:
        if not v or any(n < 1 for n in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("must be a nonempty increasing list of positive integers")
        return v

    @field_validator("times")
    @classmethod
    def _pair(cls, v: List[float]) -> List[float]:
        if len(v) != 2:
            raise ValueError("needs exactly two times")
        return v


class MetricSection(_Section):
    n_max: int = Field(32, ge=1)
    gamma: float = Field(0.0, ge=0.0)
    combine: Literal[METRIC_COMBINE] = "min"  # type: ignore[valid-type]


class RateSection(_Section):
    mu_schedule: List[float] = [10.0, 100.0, 1000.0]
    max_iter: int = Field(500, ge=1)
    memory: int = Field(10, ge=1)
    gtol: float = Field(1e-10, gt=0.0)
    gap_tol: float = Field(1e-2, gt=0.0)
    t_back: float = Field(10.0, gt=0.0)
    dt: float = Field(1e-3, gt=0.0)
    target: Optional[List[float]] = None
    target_scale: float = Field(0.5, description="Mode-0 target when none is given")

    @field_validator("mu_schedule")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if not v or any(mu <= 0.0 for mu in v):
            raise ValueError("must be a nonempty list of positive weights")
        return v

    def options(self) -> RateOptions:
        return RateOptions(
            mu_schedule=tuple(self.mu_schedule),
            max_iter=self.max_iter,
            memory=self.memory,
            gtol=self.gtol,
            gap_tol=self.gap_tol,
        )


class QuasipotentialSection(_Section):
    t_back: float = Field(5.0, gt=0.0)
    dt: float = Field(1e-2, gt=0.0)
    targets: Optional[List[List[float]]] = None
    n_targets: int = Field(5, ge=1, description="Single-mode targets when none given")
    amplitude: float = Field(0.5, gt=0.0)


class ProbeSection(_Section):
    event_kind: str = "mode_threshold"
    radius_or_level: float = Field(0.5, gt=0.0)
    mode_index: Optional[int] = 0
    n_draws: int = Field(100_000, ge=1)
    rate_reference: Optional[float] = None
    compute_reference: bool = False
    xi_sweep: Optional[List[List[float]]] = None
    horizon: float = Field(1.0, gt=0.0)

    @field_validator("event_kind")
    @classmethod
    def _known_event(cls, v: str) -> str:
        if v not in EVENT_KINDS:
            raise ValueError(f"expected one of {', '.join(EVENT_KINDS)}")
        return v

    def event(self) -> EventSpec:
        index = self.mode_index if self.event_kind == "mode_threshold" else None
        return EventSpec(self.event_kind, self.radius_or_level, index)


class RunConfig(_Section):
    """Complete description of one run."""

    model: Literal[tuple(PRESETS)]  # type: ignore[valid-type]
    seed: int = Field(0, ge=0, le=_U64_MAX)
    eps: float = Field(0.0, ge=0.0)
    eps_list: List[float] = [0.2, 0.1, 0.05, 0.025]
    workers: Optional[int] = Field(None, ge=1)
    output_dir: str = "results"
    enforce_thresholds: bool = True
    plots: bool = False
    space: SpaceConfig = SpaceConfig()
    model_params: ModelParams = ModelParams()
    noise: NoiseConfig = NoiseConfig()
    grid: GridConfig = GridConfig()
    audit: AuditConfig = AuditConfig()
    estimates: EstimatesConfig = EstimatesConfig()
    pullback: PullbackSection = PullbackSection()
    metric: MetricSection = MetricSection()
    rate: RateSection = RateSection()
    quasipotential: QuasipotentialSection = QuasipotentialSection()
    probe: ProbeSection = ProbeSection()

    @field_validator("eps_list")
    @classmethod
    def _positive_eps(cls, v: List[float]) -> List[float]:
        if any(e <= 0.0 for e in v):
            raise ValueError("every entry must be positive")
        return v

    def build_space(self) -> spectral.GalerkinSpace:
        return self.space.build()

    def build_noise(self, space: Optional[spectral.GalerkinSpace] = None) -> NoiseSpec:
        space = space or self.build_space()
        return build_noise(space, self.noise.kind, self.noise.params())

    def build_model(self) -> ModelSpec:
        space = self.build_space()
        noise = self.build_noise(space)
        params = self.model_params.model_dump(exclude_none=True)
        model = build_model(self.model, space, noise, params)
        logger.info("built model %s with %d modes", model.name, space.dim)
        return model

    def initial_state(self, space: spectral.GalerkinSpace) -> np.ndarray:
        if self.grid.xi is not None:
            return space.check(self.grid.xi, "grid.xi")
        return space.unit(0, self.grid.xi_scale)

    def metric_config(self) -> MetricConfig:
        return MetricConfig(self.metric.n_max, self.metric.gamma, self.metric.combine)

    def pullback_config(self) -> PullbackConfig:
        return PullbackConfig(
            n_schedule=tuple(self.pullback.n_schedule),
            t_end=self.pullback.t_end,
            dt=self.pullback.dt,
            tol=self.pullback.tol,
            metric=self.metric_config(),
            enforce_threshold=self.enforce_thresholds,
        )


def key_lines(text: str) -> Dict[str, int]:
    """Map dotted key paths (and section names) to 1-based line numbers."""
    lines: Dict[str, int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        header = _HEADER.match(line)
        if header:
            section = header.group(1).strip()
            lines.setdefault(section, number)
            continue
        key = _KEY.match(line)
        if key:
            path = f"{section}.{key.group(1)}" if section else key.group(1)
            lines.setdefault(path, number)
    return lines


def _line_for(loc: Tuple[Any, ...], lines: Dict[str, int]) -> Optional[int]:
    parts = [str(p) for p in loc if isinstance(p, str)]
    while parts:
        found = lines.get(".".join(parts))
        if found is not None:
            return found
        parts.pop()
    return None


def _decode_line(exc: Exception) -> Optional[int]:
    line = getattr(exc, "lineno", None)
    if line is not None:
        return int(line)
    match = re.search(r"line (\d+)", str(exc))
    return int(match.group(1)) if match else None


def validate(data: Dict[str, Any], text: str = "") -> RunConfig:
    """Validate a raw mapping into a :class:`RunConfig`.

    Raises:
        ConfigValidationError: With every error found
    """
    lines = key_lines(text)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        errors = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            path = ".".join(str(p) for p in loc) or "<root>"
            errors.append((path, _line_for(loc, lines), err["msg"]))
        raise ConfigValidationError(errors) from None


def check_thresholds(cfg: RunConfig, text: str = "") -> None:
    """Reject ε ≥ ε̃ when thresholds are enforced.

    Undeclared C_ρ1 is fitted on the audit sample first.
    """
    if not cfg.enforce_thresholds or cfg.eps <= 0.0:
        return
    lines = key_lines(text)
    try:
        model = cfg.build_model()
        model, _ = framework_check.resolve_constants(
            model,
            cfg.eps,
            cfg.audit.n_samples,
            cfg.audit.radius_h,
            cfg.seed,
            cfg.workers,
        )
        report = framework_check.thresholds(model, cfg.eps)
    except InadmissibleEpsilonError as exc:
        raise ConfigValidationError([("eps", lines.get("eps"), str(exc))]) from None
    except MonodriftError as exc:
        raise ConfigValidationError([("model", lines.get("model"), str(exc))]) from None
    eps_tilde = report.eps_tilde
    if not (math.isfinite(eps_tilde) and cfg.eps < eps_tilde):
        raise ConfigValidationError(
            [
                (
                    "eps",
                    lines.get("eps"),
                    f"eps={cfg.eps:g} is not below the computed "
                    f"eps_tilde={eps_tilde:.6g} "
                    f"(set enforce_thresholds = false to run anyway)",
                )
            ]
        )


def parse_config(
    path: str, check: bool = True, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Read and validate a TOML config (or the ``config`` block of a manifest).

    Args:
        path: ``.toml`` file, or a ``manifest.json`` written by a previous run
        check: Also apply the ε̃ threshold check
        overrides: Top-level values replacing the file's before validation

    Raises:
        ConfigValidationError: Missing file, syntax errors or invalid values
    """
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigValidationError([(str(path), None, f"cannot read file: {exc}")])
    try:
        if source.suffix == ".json":
            data = json.loads(text)
            data = data.get("config", data)
            text = ""
        else:
            data = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        errors = [(str(path), _decode_line(exc), str(exc))]
        raise ConfigValidationError(errors) from None
    if overrides:
        data = dict(data, **overrides)
    cfg = validate(data, text)
    if check:
        check_thresholds(cfg, text)
    logger.info("loaded config %s (model %s)", path, cfg.model)
    return cfg


def config_schema() -> Dict[str, Any]:
    """JSON schema of :class:`RunConfig`, including every default."""
    return RunConfig.model_json_schema()
