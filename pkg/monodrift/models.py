"""
Drift assemblies A^ε for the example equations, with their declared constants.

Every drift is a :class:`SpectralDrift`: a diagonal dissipation ``-d ⊙ x`` plus
optional convection (tabulated triple-product tensor or exact quadrature),
a reaction term projected by exact quadrature, a constant forcing and the
Kraichnan Itô-Stratonovich correction ``ε · C x``. The diagonal part is what
the integrator treats implicitly.

Declared growth constants are computed from the assembled operators (tensor
norms, sup-norm embedding on the retained modes) so they are bounds, not guesses.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from monodrift import spectral
from monodrift.noise import KraichnanSpec, NoiseSpec, attach_transport
from monodrift.spectral import DualVec, GalerkinSpace, StateVec
from monodrift.utils.error_handling import ConfigurationError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MonotonicityConstants:
    """[A2] constants. ``c_rho1=None`` means "to be fitted by the audit"."""

    gamma0: float
    c_rho1: Optional[float]
    c_rho2: float
    beta: float

    def __post_init__(self) -> None:
        if not self.gamma0 > 0.0:
            raise UsageError("gamma0 must be positive")
        if self.beta < 0.0 or self.c_rho2 < 0.0:
            raise UsageError("beta and c_rho2 must be nonnegative")
        if self.c_rho1 is not None and self.c_rho1 < 0.0:
            raise UsageError("c_rho1 must be nonnegative")


@dataclass(frozen=True)
class GrowthConstants:
    c_a: float
    kappa: float

    def __post_init__(self) -> None:
        if not self.c_a > 0.0:
            raise UsageError("c_a must be positive")


@dataclass(frozen=True)
class NoiseConstants:
    c_b: float
    l_b: float
    u_dim: int

    def __post_init__(self) -> None:
        if not self.c_b > 0.0 or self.u_dim < 1:
            raise UsageError("noise constants need c_b > 0 and u_dim ≥ 1")


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term g(u) = Σ_p a_p u^p + L·sin(u), p = 1..r.

    Attributes:
        coefficients: (a_1, ..., a_r); g(0) = 0 always
        lipschitz_amplitude: L of the bounded Lipschitz part
    """

    coefficients: Tuple[float, ...] = ()
    lipschitz_amplitude: float = 0.0

    @property
    def degree(self) -> int:
        coefs = list(self.coefficients)
        while coefs and coefs[-1] == 0.0:
            coefs.pop()
        return len(coefs)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for p, a in enumerate(self.coefficients, start=1):
            if a:
                out = out + a * u**p
        if self.lipschitz_amplitude:
            out = out + self.lipschitz_amplitude * np.sin(u)
        return out

    def derivative(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for p, a in enumerate(self.coefficients, start=1):
            if a:
                out = out + p * a * u ** (p - 1)
        if self.lipschitz_amplitude:
            out = out + self.lipschitz_amplitude * np.cos(u)
        return out

    def one_sided_constant(self) -> float:
        """C_g with (g(ξ) − g(ζ))(ξ − ζ) ≤ C_g (ξ − ζ)², i.e. (sup g′) ∨ 0.

        Raises:
            ConfigurationError: Degree above 3, or g′ unbounded above
        """
        r = self.degree
        if r > 3:
            raise ConfigurationError(
                f"unsupported reaction growth r={r}; polynomial degree must be ≤ 3"
            )
        a = list(self.coefficients) + [0.0, 0.0, 0.0]
        a1, a2, a3 = a[0], a[1], a[2]
        if r == 3 and a3 > 0.0 or r == 2:
            raise ConfigurationError(
                "reaction term is not one-sided Lipschitz (g′ unbounded above)"
            )
        sup = a1 - a2 * a2 / (3.0 * a3) if r == 3 else a1
        return max(sup + abs(self.lipschitz_amplitude), 0.0)


class SpectralDrift:
    """Evaluator of A^ε on stacked states.

    Args:
        space: Galerkin space
        dissipation: Per-mode rates d_k of the implicit part ``-d ⊙ x``
        tensor: Optional (N, N, N) array T with term ``tensor_coef · T[m,i,j] x_i x_j``
        tensor_coef: Sign/scale of the tensor term
        convection: Coefficient f₁ of the 1D convection f₁·u∂ₓu (quadrature)
        reaction: Optional reaction term g (quadrature)
        forcing: Optional constant dual vector
        correction: Optional N×N matrix applied as ``ε · C x``
    """

    def __init__(
        self,
        space: GalerkinSpace,
        dissipation: np.ndarray,
        tensor: Optional[np.ndarray] = None,
        tensor_coef: float = 1.0,
        convection: float = 0.0,
        reaction: Optional[ReactionSpec] = None,
        forcing: Optional[np.ndarray] = None,
        correction: Optional[np.ndarray] = None,
    ):
        self.space = space
        self.dissipation = np.asarray(dissipation, dtype=np.float64)
        self.tensor = tensor
        self.tensor_coef = tensor_coef
        self.convection = float(convection)
        self.reaction = reaction
        self.forcing = None if forcing is None else np.asarray(forcing, dtype=float)
        self.correction = correction
        self._quad = None
        if self.convection or reaction is not None:
            _, weight, basis, deriv = spectral.sine_quadrature(space)
            self._quad = (weight, basis, deriv)

    @property
    def is_linear(self) -> bool:
        """True when A⁰ is affine (its Jacobian is −diag(d))."""
        return self.tensor is None and self._quad is None

    def nonlinear(self, eps: float, x: np.ndarray) -> np.ndarray:
        """Everything except the implicit dissipation."""
        out = np.zeros_like(x)
        if self.tensor is not None:
            out = out + self.tensor_coef * np.einsum(
                "mij,...i,...j->...m", self.tensor, x, x
            )
        if self._quad is not None:
            weight, basis, deriv = self._quad
            u = x @ basis.T
            nodal = np.zeros_like(u)
            if self.convection:
                nodal = nodal + self.convection * u * (x @ deriv.T)
            if self.reaction is not None:
                nodal = nodal + self.reaction(u)
            out = out + weight * (nodal @ basis)
        if self.correction is not None and eps:
            out = out + eps * (x @ self.correction.T)
        if self.forcing is not None:
            out = out + self.forcing
        return out

    def __call__(self, eps: float, x: StateVec) -> DualVec:
        x = self.space.check(x, "state")
        return self.nonlinear(eps, x) - self.dissipation * x

    def jacobian(self, eps: float, x: StateVec) -> np.ndarray:
        """Jacobian of v ↦ A^ε(v) at a single state (N×N)."""
        x = self.space.check(x, "state")
        jac = -np.diag(self.dissipation)
        if self.tensor is not None:
            jac = jac + self.tensor_coef * (
                np.einsum("mij,j->mi", self.tensor, x)
                + np.einsum("mij,i->mj", self.tensor, x)
            )
        if self._quad is not None:
            weight, basis, deriv = self._quad
            u = basis @ x
            nodal_jac = np.zeros_like(basis)
            if self.convection:
                ux = deriv @ x
                nodal_jac = nodal_jac + self.convection * (
                    ux[:, None] * basis + u[:, None] * deriv
                )
            if self.reaction is not None:
                nodal_jac = nodal_jac + self.reaction.derivative(u)[:, None] * basis
            jac = jac + weight * (basis.T @ nodal_jac)
        if self.correction is not None and eps:
            jac = jac + eps * self.correction
        return jac


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Drift, noise and declared framework constants of one equation.

    Attributes:
        name: Preset label
        space: Galerkin space
        drift: A^ε evaluator, ``drift(eps, x)``
        noise: B evaluator, ``noise(x)`` gives the N×K matrix
        mono: [A2] constants
        growth: [A3] drift constants
        noise_consts: [A3]/[A4] noise constants
        a0_dual_norm: sup over ε of ‖A^ε(0)‖_{V*}
        params: Builder parameters, for reports
    """

    name: str
    space: GalerkinSpace
    drift: SpectralDrift
    noise: NoiseSpec
    mono: MonotonicityConstants
    growth: GrowthConstants
    noise_consts: NoiseConstants
    a0_dual_norm: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def linear_diag(self) -> np.ndarray:
        return self.drift.dissipation

    def drift_jacobian(self, eps: float, x: StateVec) -> np.ndarray:
        return self.drift.jacobian(eps, x)

    def with_constants(self, **changes: Any) -> "ModelSpec":
        """Copy with some [A2] constants replaced."""
        return dataclasses.replace(self, mono=dataclasses.replace(self.mono, **changes))

    def describe(self) -> Dict[str, Any]:
        """Flat dictionary of the declared constants."""
        return {
            "name": self.name,
            "dim": self.space.dim,
            "lambda1": self.space.lambda1,
            "gamma0": self.mono.gamma0,
            "c_rho1": self.mono.c_rho1,
            "c_rho2": self.mono.c_rho2,
            "beta": self.mono.beta,
            "c_a": self.growth.c_a,
            "kappa": self.growth.kappa,
            "c_b": self.noise_consts.c_b,
            "l_b": self.noise_consts.l_b,
            "u_dim": self.noise_consts.u_dim,
            "noise_kind": self.noise.kind,
            "a0_dual_norm": self.a0_dual_norm,
        }


# (coefficient a, H-power q, V-power p): ‖term(u)‖_{V*} ≤ a ‖u‖_H^q ‖u‖_V^p
GrowthTerm = Tuple[float, int, int]


def growth_constant(terms: Sequence[GrowthTerm], kappa: float) -> float:
    """C_A with ‖Σ terms‖²_{V*} ≤ C_A (1 + ‖u‖²_V)(1 + ‖u‖^κ_H).

    Uses (Σ_i a_i)² ≤ n Σ_i a_i² and r^{2q} ≤ 1 + r^κ for 2q ≤ κ.
    """
    live = [(a, q, p) for a, q, p in terms if a > 0.0]
    for _, q, p in live:
        if 2 * q > kappa or p > 1:
            raise ConfigurationError(f"growth term of H-power {q} exceeds κ={kappa}")
    if not live:
        return 1.0
    return len(live) * sum(a * a for a, _, _ in live)


def scaled_tensor_norm(space: GalerkinSpace, tensor: np.ndarray) -> float:
    """‖T̃‖_F with T̃[m,i,j] = T[m,i,j] / √(w_m w_j).

    Bounds the bilinear term: ‖T(u, u)‖_{V*} ≤ ‖T̃‖_F ‖u‖_H ‖u‖_V.
    """
    s = 1.0 / np.sqrt(space.v_weights)
    scaled = tensor * s[:, None, None] * s[None, None, :]
    return float(np.sqrt(np.sum(scaled**2)))


def sine_sup_constant(space: GalerkinSpace) -> float:
    """c∞² with ‖v‖²_{L∞} ≤ c∞² ‖v‖²_V on the retained sine modes."""
    return float(2.0 / np.pi * np.sum(1.0 / space.v_weights))


def burgers_tensor(space: GalerkinSpace) -> np.ndarray:
    """T[m,i,j] = ∫ e_i ∂ₓe_j e_m dx, exact by quadrature."""
    _, weight, basis, deriv = spectral.sine_quadrature(space)
    return weight * np.einsum("li,lj,lm->mij", basis, deriv, basis)


def ns_tensor(space: GalerkinSpace) -> np.ndarray:
    """T[m,i,j] = ⟨(e_i·∇)e_j, e_m⟩_H on the torus basis, exact by grid average."""
    basis, grad = spectral.torus_quadrature(space)
    n_pts = basis.shape[0]
    return np.einsum("pcm,pdi,pdcj->mij", basis, basis, grad) / n_pts


def _require_beta_zero(noise: NoiseSpec, name: str) -> None:
    if noise.beta != 0.0:
        raise ConfigurationError(
            f"{name} declares beta=0 but {noise.kind} noise satisfies [A4] only "
            f"with beta={noise.beta:g}"
        )


def _noise_constants(noise: NoiseSpec) -> NoiseConstants:
    return NoiseConstants(c_b=noise.c_b, l_b=noise.l_b, u_dim=noise.u_dim)


def _check_space(space: GalerkinSpace, geometry: str, name: str) -> None:
    if space.geometry != geometry:
        raise ConfigurationError(
            f"{name} needs a {geometry} space, got {space.geometry}"
        )


def build_linear(
    space: GalerkinSpace,
    chi: float,
    noise: NoiseSpec,
    forcing: Optional[np.ndarray] = None,
) -> ModelSpec:
    """Linear (Ornstein-Uhlenbeck) drift A(v) = −χ W v + f.

    Each mode relaxes at rate χ w_k; with one mode of weight 1 this is the scalar
    OU benchmark dx = −χ x dt + √ε σ dW.
    """
    if not chi > 0.0:
        raise UsageError("chi must be positive")
    if noise.transport is not None:
        raise ConfigurationError("linear model does not carry a transport correction")
    f = space.zeros() if forcing is None else space.check(forcing, "forcing").copy()
    a0 = math.sqrt(float(spectral.dual_norm_sq(space, f)))
    gamma0 = chi if noise.is_additive else chi / 2.0
    d = chi * space.v_weights
    c_a = growth_constant([(chi, 0, 1), (a0, 0, 0)], kappa=2.0)
    return ModelSpec(
        name="linear",
        space=space,
        drift=SpectralDrift(space, d, forcing=f if a0 > 0.0 else None),
        noise=noise,
        mono=MonotonicityConstants(
            gamma0=gamma0, c_rho1=0.0, c_rho2=0.0, beta=noise.beta
        ),
        growth=GrowthConstants(c_a=c_a, kappa=2.0),
        noise_consts=_noise_constants(noise),
        a0_dual_norm=a0,
        params={"chi": chi},
    )


def build_burgers_1d(space: GalerkinSpace, chi: float, noise: NoiseSpec) -> ModelSpec:
    """Viscous Burgers drift χ∂ₓ²X + X∂ₓX on Dirichlet sine modes.

    Raises:
        ConfigurationError: Wrong geometry or noise needing β > 0
    """
    _check_space(space, "sine1d", "burgers1d")
    _require_beta_zero(noise, "burgers1d")
    return _semilinear(space, chi, ReactionSpec(), noise, 1.0, "burgers1d")


def build_semilinear_1d(
    space: GalerkinSpace,
    chi: float,
    g_spec: ReactionSpec,
    noise: NoiseSpec,
    f_coef: float = 0.0,
) -> ModelSpec:
    """Semilinear drift χΔX + f(X)∂ₓX + g(X) with f(u) = f_coef·u.

    Declares γ₀ = χ/2, C_ρ2 = 2C_g, β = 0, κ = 4.

    Raises:
        ConfigurationError: Reaction degree above 3 or not one-sided Lipschitz
    """
    _check_space(space, "sine1d", "semilinear1d")
    _require_beta_zero(noise, "semilinear1d")
    return _semilinear(space, chi, g_spec, noise, f_coef, "semilinear1d")


def build_ginzburg_landau_1d(
    space: GalerkinSpace, chi: float, alpha: float, c: float, noise: NoiseSpec
) -> ModelSpec:
    """Ginzburg-Landau preset g(u) = −αu − cu³."""
    if alpha < 0.0 or c < 0.0:
        raise ConfigurationError("gl1d needs alpha ≥ 0 and c ≥ 0")
    _check_space(space, "sine1d", "gl1d")
    _require_beta_zero(noise, "gl1d")
    return _semilinear(space, chi, ReactionSpec((-alpha, 0.0, -c)), noise, 0.0, "gl1d")


def build_reaction_1d(
    space: GalerkinSpace, chi: float, alpha: float, lipschitz: float, noise: NoiseSpec
) -> ModelSpec:
    """Lipschitz-damped reaction g(u) = −αu + L·sin(u), C_g = (L − α) ∨ 0."""
    _check_space(space, "sine1d", "reaction1d")
    _require_beta_zero(noise, "reaction1d")
    g = ReactionSpec((-alpha,), lipschitz_amplitude=lipschitz)
    return _semilinear(space, chi, g, noise, 0.0, "reaction1d")


def _semilinear(
    space: GalerkinSpace,
    chi: float,
    g_spec: ReactionSpec,
    noise: NoiseSpec,
    f_coef: float,
    name: str,
) -> ModelSpec:
    if not chi > 0.0:
        raise UsageError("chi must be positive")
    if noise.transport is not None:
        raise ConfigurationError(f"{name} does not support transport noise")
    c_g = g_spec.one_sided_constant()
    lam = space.lambda1
    terms: List[GrowthTerm] = [(chi, 0, 1)]
    if f_coef:
        c_b = scaled_tensor_norm(space, burgers_tensor(space))
        terms.append((abs(f_coef) * c_b, 1, 1))
    coefs = list(g_spec.coefficients) + [0.0, 0.0, 0.0]
    c_inf_sq = sine_sup_constant(space)
    terms.append((abs(coefs[0]) / math.sqrt(lam), 1, 0))
    terms.append((abs(coefs[1]) * math.sqrt(c_inf_sq), 2, 0))
    terms.append((abs(coefs[2]) * c_inf_sq, 2, 1))
    terms.append((abs(g_spec.lipschitz_amplitude) / math.sqrt(lam), 1, 0))
    c_a = growth_constant(terms, kappa=4.0)
    reaction = g_spec if (g_spec.degree or g_spec.lipschitz_amplitude) else None
    drift = SpectralDrift(
        space, chi * space.v_weights, convection=f_coef, reaction=reaction
    )
    spec = ModelSpec(
        name=name,
        space=space,
        drift=drift,
        noise=noise,
        mono=MonotonicityConstants(
            gamma0=chi / 2.0, c_rho1=None, c_rho2=2.0 * c_g, beta=0.0
        ),
        growth=GrowthConstants(c_a=c_a, kappa=4.0),
        noise_consts=_noise_constants(noise),
        params={
            "chi": chi,
            "f_coef": f_coef,
            "g_coefficients": list(g_spec.coefficients),
            "g_lipschitz": g_spec.lipschitz_amplitude,
        },
    )
    logger.info("built %s model: N=%d, C_A=%.6g, C_g=%.6g", name, space.dim, c_a, c_g)
    return spec


def build_ns_2d(
    space: GalerkinSpace,
    chi: float,
    noise: NoiseSpec,
    kraichnan: Optional[KraichnanSpec] = None,
) -> ModelSpec:
    """2D Navier-Stokes drift −χAu − F(u, u) on divergence-free torus modes.

    γ₀ = χ/2 for additive noise and χ/4 otherwise. With transport noise (either
    ``kraichnan`` or a ``kraichnan_overlay`` noise) the drift gains ``ε·½ΣS_j²``.

    Raises:
        ConfigurationError: Mode set is not a divergence-free torus basis
    """
    if space.geometry != "torus2d" or not spectral.is_divergence_free_torus(
        space.mode_labels
    ):
        raise ConfigurationError("ns2d needs a divergence-free torus2d mode set")
    if not chi > 0.0:
        raise UsageError("chi must be positive")
    if kraichnan is not None:
        noise = attach_transport(noise, kraichnan)
    tensor = ns_tensor(space)
    correction = None if noise.transport is None else noise.transport.correction
    terms: List[GrowthTerm] = [(chi, 0, 1), (scaled_tensor_norm(space, tensor), 1, 1)]
    if correction is not None:
        s = 1.0 / np.sqrt(space.v_weights)
        c_k = float(np.linalg.norm(s[:, None] * correction * s[None, :], 2))
        terms.append((c_k, 0, 1))
    c_a = growth_constant(terms, kappa=2.0)
    gamma0 = chi / 2.0 if noise.is_additive else chi / 4.0
    drift = SpectralDrift(
        space, chi * space.v_weights, tensor=tensor, tensor_coef=-1.0,
        correction=correction,
    )
    logger.info(
        "built ns2d model: N=%d, C_A=%.6g, noise=%s", space.dim, c_a, noise.kind
    )
    return ModelSpec(
        name="ns2d",
        space=space,
        drift=drift,
        noise=noise,
        mono=MonotonicityConstants(
            gamma0=gamma0, c_rho1=None, c_rho2=0.0, beta=noise.beta
        ),
        growth=GrowthConstants(c_a=c_a, kappa=2.0),
        noise_consts=_noise_constants(noise),
        params={"chi": chi},
    )


PRESETS: Dict[str, Callable[..., ModelSpec]] = {
    "linear": build_linear,
    "burgers1d": build_burgers_1d,
    "semilinear1d": build_semilinear_1d,
    "gl1d": build_ginzburg_landau_1d,
    "reaction1d": build_reaction_1d,
    "ns2d": build_ns_2d,
}


def build_model(
    name: str, space: GalerkinSpace, noise: NoiseSpec, params: Dict[str, Any]
) -> ModelSpec:
    """Build a preset by name from a flat parameter dictionary.

    Args:
        name: Key of :data:`PRESETS`
        space: Galerkin space
        noise: Noise operator
        params: Preset parameters (``chi``; ``alpha``/``c`` for gl1d;
            ``alpha``/``lipschitz`` for reaction1d; ``g_coefficients``,
            ``g_lipschitz``, ``f_coef`` for semilinear1d; ``forcing`` for linear)

    Raises:
        ConfigurationError: Unknown preset
    """
    chi = float(params.get("chi", 1.0))
    if name == "linear":
        forcing = params.get("forcing")
        if forcing is not None:
            forcing = np.asarray(forcing, dtype=np.float64)
        return build_linear(space, chi, noise, forcing)
    if name == "burgers1d":
        return build_burgers_1d(space, chi, noise)
    if name == "semilinear1d":
        g = ReactionSpec(
            tuple(float(a) for a in params.get("g_coefficients", ())),
            float(params.get("g_lipschitz", 0.0)),
        )
        f_coef = float(params.get("f_coef", 0.0))
        return build_semilinear_1d(space, chi, g, noise, f_coef)
    if name == "gl1d":
        return build_ginzburg_landau_1d(
            space,
            chi,
            float(params.get("alpha", 1.0)),
            float(params.get("c", 1.0)),
            noise,
        )
    if name == "reaction1d":
        return build_reaction_1d(
            space,
            chi,
            float(params.get("alpha", 1.0)),
            float(params.get("lipschitz", 0.5)),
            noise,
        )
    if name == "ns2d":
        return build_ns_2d(space, chi, noise)
    raise ConfigurationError(
        f"unknown model {name!r}; expected one of {', '.join(sorted(PRESETS))}"
    )
