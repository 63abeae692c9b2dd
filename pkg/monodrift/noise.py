"""
Noise operators B: V → L₂(U; H) on a truncated noise space U.

U carries an orthonormal basis {𝒰_k}. The base part of every noise maps 𝒰_k to
``amp_k e_{mode_k}`` (mode-aligned columns) scaled by a state-dependent factor
a(v); a Kraichnan overlay appends one transport column ``Π(σ_j·∇v)`` per
divergence-free field σ_j. Each spec declares the [A3]/[A4] constants C_B, L_B
and the exponent β it is compatible with.

Kinds:

* ``additive``       a(v) = 1
* ``bounded_mult``   a(v) = σ₀ (1 + θ sin v_ref), θ ∈ [0, 1)
* ``decaying_mult``  a(v) = σ₀ / (1 + ‖v‖²_H), β = 2
* ``kraichnan_overlay``  one of the above plus transport columns (2D torus only)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from monodrift import spectral
from monodrift.spectral import GalerkinSpace
from monodrift.utils.error_handling import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

NOISE_KINDS = ("additive", "bounded_mult", "decaying_mult", "kraichnan_overlay")

# max over r ≥ 0 of (d/dr 1/(1+r²))² = (3√3/8)²
_DECAY_LIP_SQ = 27.0 / 64.0


@dataclass(frozen=True, eq=False)
class KraichnanSpec:
    """Divergence-free transport fields σ_j and their Galerkin generators.

    Attributes:
        wavevectors: (k1, k2, part) label of each field
        amplitudes: θ_j, so σ_j = θ_j · (torus basis field)
        generators: Array (J, N, N) with S_j[m, n] = ⟨σ_j·∇e_n, e_m⟩_H
        l_b: Σ_j ‖σ_j‖²_{L∞} scaled to the space's V-norm
        correction: ½ Σ_j S_j², the Itô-Stratonovich drift per unit ε
    """

    wavevectors: Tuple[Tuple[int, int, str], ...]
    amplitudes: np.ndarray
    generators: np.ndarray
    l_b: float
    correction: np.ndarray


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """A noise operator together with its declared constants.

    Calling the operator on a state (or stack of states) returns the N×K matrix of
    B(v) on the U-basis.

    Attributes:
        kind: One of :data:`NOISE_KINDS`
        space: Galerkin space the operator acts on
        modes: Mode index of each base column
        amplitudes: Amplitude of each base column
        sigma0: Scale σ₀ of multiplicative kinds
        theta: Modulation depth of ``bounded_mult``
        ref_mode: Mode read by the ``bounded_mult`` modulation
        c_b: Declared C_B
        l_b: Declared L_B
        beta: Exponent β the noise satisfies [A4] with
        transport: Kraichnan transport part, if any
        flags: [A4]-structure flags (informational)
    """

    kind: str
    space: GalerkinSpace
    modes: np.ndarray
    amplitudes: np.ndarray
    sigma0: float = 1.0
    theta: float = 0.0
    ref_mode: int = 0
    c_b: float = 0.0
    l_b: float = 0.0
    beta: float = 0.0
    transport: Optional[KraichnanSpec] = None
    flags: Dict[str, bool] = field(default_factory=dict)
    base_kind: str = "additive"
    b0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.space.dim
        b0 = np.zeros((n, len(self.modes)))
        for col, (mode, amp) in enumerate(zip(self.modes, self.amplitudes)):
            b0[int(mode), col] = amp
        object.__setattr__(self, "b0", b0)

    @property
    def u_dim(self) -> int:
        """Dimension K of the truncated noise space."""
        extra = 0 if self.transport is None else len(self.transport.wavevectors)
        return len(self.modes) + extra

    @property
    def is_additive(self) -> bool:
        return self.base_kind == "additive" and self.transport is None

    def scale(self, v: np.ndarray) -> np.ndarray:
        """State-dependent factor a(v) of the base columns."""
        v = np.asarray(v, dtype=np.float64)
        if self.base_kind == "additive":
            return np.ones(v.shape[:-1])
        if self.base_kind == "bounded_mult":
            return self.sigma0 * (1.0 + self.theta * np.sin(v[..., self.ref_mode]))
        return self.sigma0 / (1.0 + np.einsum("...k,...k->...", v, v))

    def scale_gradient(self, v: np.ndarray) -> np.ndarray:
        """Gradient of a(v) for a single state."""
        v = np.asarray(v, dtype=np.float64)
        grad = np.zeros_like(v)
        if self.base_kind == "bounded_mult":
            grad[self.ref_mode] = (
                self.sigma0 * self.theta * math.cos(v[self.ref_mode])
            )
        elif self.base_kind == "decaying_mult":
            r2 = float(v @ v)
            grad = -2.0 * self.sigma0 * v / (1.0 + r2) ** 2
        return grad

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = self.space.check(v, "state")
        base = self.scale(v)[..., None, None] * self.b0
        if self.transport is None:
            return base
        cols = np.einsum("jmn,...n->...mj", self.transport.generators, v)
        return np.concatenate([base, cols], axis=-1)

    def apply(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """B(v) w for stacked states ``v`` (..., N) and U-vectors ``w`` (..., K)."""
        v = np.asarray(v, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        k0 = len(self.modes)
        out = self.scale(v)[..., None] * (w[..., :k0] @ self.b0.T)
        if self.transport is not None:
            out = out + np.einsum(
                "jmn,...n,...j->...m", self.transport.generators, v, w[..., k0:]
            )
        return out

    def apply_jacobian(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Jacobian of v ↦ B(v) w at a single state (N×N)."""
        k0 = len(self.modes)
        jac = np.outer(self.b0 @ w[:k0], self.scale_gradient(v))
        if self.transport is not None:
            jac = jac + np.einsum("jmn,j->mn", self.transport.generators, w[k0:])
        return jac

    def hs_norm_sq(self, v: np.ndarray) -> np.ndarray:
        """Hilbert-Schmidt norm ‖B(v)‖²₂ for stacked states."""
        b = self(v)
        return np.einsum("...mk,...mk->...", b, b)


def _columns(
    space: GalerkinSpace, params: Dict[str, Any]
) -> Tuple[np.ndarray, np.ndarray]:
    k = int(params.get("k", params.get("u_dim", space.dim)))
    if k < 1 or k > space.dim:
        raise ConfigurationError(f"noise needs 1 ≤ K ≤ {space.dim}, got {k}")
    modes = np.asarray(params.get("modes", np.arange(k)), dtype=np.int64)
    if modes.size != k or np.any(modes < 0) or np.any(modes >= space.dim):
        raise ConfigurationError("noise modes must be K distinct valid mode indices")
    if len(set(modes.tolist())) != k:
        raise ConfigurationError("noise modes must be distinct")
    amps = params.get("amplitudes", 1.0)
    amps = np.broadcast_to(np.asarray(amps, dtype=np.float64), (k,)).copy()
    if np.any(~np.isfinite(amps)):
        raise ConfigurationError("noise amplitudes must be finite")
    return modes, amps


def build_kraichnan(
    space: GalerkinSpace, q_max: float = 1.0, amplitude: float = 0.1
) -> KraichnanSpec:
    """Transport fields σ_j = θ · (torus basis field) for 0 < |q| ≤ q_max.

    The generator matrices are assembled by exact grid quadrature, so each
    S_j is skew-symmetric to rounding and ⟨v, S_j v⟩_H = 0.
    """
    if space.geometry != "torus2d":
        raise ConfigurationError("Kraichnan transport noise needs a torus2d space")
    field_space = spectral.torus_space(q_max)
    kmax = max(max(abs(lab[0]), abs(lab[1])) for lab in space.mode_labels)
    qmax = max(max(abs(lab[0]), abs(lab[1])) for lab in field_space.mode_labels)
    m = 2 * kmax + qmax + 2
    e, grad_e = spectral.torus_quadrature(space, m)
    sig, _ = spectral.torus_quadrature(field_space, m)
    n_pts = e.shape[0]
    # S_j[m, n] = mean_x Σ_{c,d} e_m^c σ_j^d ∂_d e_n^c
    gens = amplitude * np.einsum("pcm,pdj,pdcn->jmn", e, sig, grad_e) / n_pts
    ratio = float(np.max(_gradient_weights(space) / space.v_weights))
    l_b = 2.0 * amplitude**2 * field_space.dim * ratio
    corr = 0.5 * np.einsum("jmk,jkn->mn", gens, gens)
    logger.debug("built %d Kraichnan fields, L_B=%.6g", field_space.dim, l_b)
    return KraichnanSpec(
        wavevectors=tuple(field_space.mode_labels),
        amplitudes=np.full(field_space.dim, amplitude),
        generators=gens,
        l_b=l_b,
        correction=corr,
    )


def _gradient_weights(space: GalerkinSpace) -> np.ndarray:
    return np.array([float(k1 * k1 + k2 * k2) for k1, k2, _ in space.mode_labels])


def build_noise(
    space: GalerkinSpace, kind: str, params: Optional[Dict[str, Any]] = None
) -> NoiseSpec:
    """Build a noise operator and declare its constants.

    Args:
        space: Galerkin space
        kind: ``additive``, ``bounded_mult``, ``decaying_mult`` or
            ``kraichnan_overlay``
        params: ``k`` (number of base columns), ``modes``, ``amplitudes``,
            ``sigma0``, ``theta``, ``ref_mode``; for ``kraichnan_overlay`` also
            ``base`` (base kind), ``q_max`` and ``field_amplitude``

    Returns:
        The noise spec

    Raises:
        ConfigurationError: Unknown kind or invalid parameters
    """
    params = dict(params or {})
    if kind not in NOISE_KINDS:
        raise ConfigurationError(
            f"unknown noise kind {kind!r}; expected one of {', '.join(NOISE_KINDS)}"
        )
    if kind == "kraichnan_overlay":
        base_kind = params.pop("base", "additive")
        if base_kind == "kraichnan_overlay":
            raise ConfigurationError("kraichnan_overlay needs a non-transport base")
        base = build_noise(space, base_kind, params)
        transport = build_kraichnan(
            space,
            q_max=float(params.get("q_max", 1.0)),
            amplitude=float(params.get("field_amplitude", 0.1)),
        )
        flags = dict(base.flags, transport_skew=True)
        return NoiseSpec(
            kind=kind,
            space=space,
            modes=base.modes,
            amplitudes=base.amplitudes,
            sigma0=base.sigma0,
            theta=base.theta,
            ref_mode=base.ref_mode,
            c_b=base.c_b,
            l_b=base.l_b + transport.l_b,
            beta=base.beta,
            transport=transport,
            flags=flags,
            base_kind=base.base_kind,
        )

    modes, amps = _columns(space, params)
    amp_sq = float(np.sum(amps**2))
    sigma0 = float(params.get("sigma0", 1.0))
    theta = float(params.get("theta", 0.0))
    ref_mode = int(params.get("ref_mode", 0))
    if kind == "additive":
        c_b, beta = amp_sq, 0.0
        flags = {"constant": True}
    elif kind == "bounded_mult":
        if not 0.0 <= theta < 1.0:
            raise ConfigurationError("bounded_mult needs 0 ≤ theta < 1")
        if not 0 <= ref_mode < space.dim:
            raise ConfigurationError("bounded_mult ref_mode out of range")
        c_b, beta = sigma0**2 * (1.0 + theta) ** 2 * amp_sq, 0.0
        flags = {"bounded": True}
    else:
        if sigma0 <= 0.0:
            raise ConfigurationError("decaying_mult needs sigma0 > 0")
        c_b, beta = sigma0**2 * amp_sq, 2.0
        flags = {"decaying": True}
    if c_b <= 0.0:
        raise ConfigurationError("noise must have a positive Hilbert-Schmidt bound")
    return NoiseSpec(
        kind=kind,
        space=space,
        modes=modes,
        amplitudes=amps,
        sigma0=sigma0 if kind != "additive" else 1.0,
        theta=theta,
        ref_mode=ref_mode,
        c_b=c_b,
        l_b=0.0,
        beta=beta,
        flags=flags,
        base_kind=kind,
    )


def attach_transport(noise: NoiseSpec, transport: KraichnanSpec) -> NoiseSpec:
    """Return ``noise`` with Kraichnan transport columns appended."""
    if noise.transport is not None:
        raise ConfigurationError("noise already carries transport columns")
    return NoiseSpec(
        kind="kraichnan_overlay",
        space=noise.space,
        modes=noise.modes,
        amplitudes=noise.amplitudes,
        sigma0=noise.sigma0,
        theta=noise.theta,
        ref_mode=noise.ref_mode,
        c_b=noise.c_b,
        l_b=noise.l_b + transport.l_b,
        beta=noise.beta,
        transport=transport,
        flags=dict(noise.flags, transport_skew=True),
        base_kind=noise.base_kind,
    )


def mode_indices(space: GalerkinSpace, labels: Sequence[Any]) -> np.ndarray:
    """Map mode labels to indices, raising UsageError on unknown labels."""
    lookup = {lab: i for i, lab in enumerate(space.mode_labels)}
    try:
        return np.array([lookup[lab] for lab in labels], dtype=np.int64)
    except KeyError as e:
        raise UsageError(f"unknown mode label {e.args[0]!r}") from None
