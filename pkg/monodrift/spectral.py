"""
Finite-dimensional Gelfand triple V ⊂ H ⊂ V*.

A state is a vector of coefficients against an H-orthonormal basis. The V-norm is
a weighted sum ``Σ w_k v_k²`` and the dual pairing between V* and V is the plain
dot product, so ``‖f‖²_{V*} = Σ f_k² / w_k``. All norm helpers accept stacked
arrays (last axis = modes) and reduce over the last axis only.

Two concrete geometries are provided:

* ``sine1d``: Dirichlet sine modes ``sqrt(2/π) sin(kx)`` on (0, π), k = 1..N;
* ``torus2d``: realified divergence-free Fourier modes on [0, 2π]²,
  ``sqrt(2) cos(k·x) k⊥/|k|`` and ``sqrt(2) sin(k·x) k⊥/|k|`` for k in a
  half-lattice with 0 < |k| ≤ k_max.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from monodrift.utils import rng
from monodrift.utils.error_handling import DimensionError, UsageError

StateVec = np.ndarray
DualVec = np.ndarray


@dataclass(frozen=True, eq=False)
class GalerkinSpace:
    """Truncated spectral basis with per-mode V-weights.

    Attributes:
        v_weights: Positive weights w_k defining ‖v‖²_V = Σ w_k v_k²
        mode_labels: One opaque descriptor per mode
        geometry: ``"generic"``, ``"sine1d"`` or ``"torus2d"``
        alpha: Dissipation exponent used to build the weights
    """

    v_weights: np.ndarray
    mode_labels: Tuple[Any, ...] = ()
    geometry: str = "generic"
    alpha: float = 1.0
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        weights = np.array(self.v_weights, dtype=np.float64).reshape(-1)
        if weights.size == 0:
            raise UsageError("a Galerkin space needs at least one mode")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
            raise UsageError("all V-weights must be finite and positive")
        weights.setflags(write=False)
        labels = tuple(self.mode_labels) if self.mode_labels else tuple(
            range(weights.size)
        )
        if len(labels) != weights.size:
            raise UsageError(
                f"{len(labels)} mode labels given for {weights.size} weights"
            )
        object.__setattr__(self, "v_weights", weights)
        object.__setattr__(self, "mode_labels", labels)
        object.__setattr__(self, "dim", int(weights.size))

    @property
    def lambda1(self) -> float:
        """Embedding constant λ₁ = min_k w_k."""
        return float(self.v_weights.min())

    def zeros(self) -> StateVec:
        return np.zeros(self.dim)

    def unit(self, index: int, scale: float = 1.0) -> StateVec:
        """Scaled basis vector of mode ``index``."""
        v = np.zeros(self.dim)
        v[index] = scale
        return v

    def check(self, v: np.ndarray, name: str = "vector") -> np.ndarray:
        """Return ``v`` as a float array, raising if its last axis is not ``dim``."""
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 0 or arr.shape[-1] != self.dim:
            raise DimensionError(
                f"{name} has shape {arr.shape}, expected last axis {self.dim}"
            )
        return arr


def single_mode_space(weight: float = 1.0) -> GalerkinSpace:
    """One-mode space, the home of scalar Ornstein-Uhlenbeck benchmarks."""
    return GalerkinSpace(v_weights=np.array([weight]), mode_labels=(1,))


def sine_space(n_modes: int, alpha: float = 1.0) -> GalerkinSpace:
    """Dirichlet sine modes k = 1..n_modes with weights k^{2α}."""
    if n_modes < 1:
        raise UsageError("n_modes must be at least 1")
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    return GalerkinSpace(
        v_weights=k ** (2.0 * alpha),
        mode_labels=tuple(range(1, n_modes + 1)),
        geometry="sine1d",
        alpha=alpha,
    )


def torus_wavevectors(k_max: float) -> Tuple[Tuple[int, int], ...]:
    """Half-lattice wavevectors with 0 < |k| ≤ k_max, ordered by |k|²."""
    kk = int(math.floor(k_max))
    vecs = []
    for k1 in range(0, kk + 1):
        for k2 in range(-kk, kk + 1):
            if k1 == 0 and k2 <= 0:
                continue
            if k1 * k1 + k2 * k2 <= k_max * k_max + 1e-12:
                vecs.append((k1, k2))
    vecs.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    return tuple(vecs)


def torus_space(k_max: float, alpha: float = 1.0) -> GalerkinSpace:
    """Realified divergence-free Fourier modes on the 2-torus, weights |k|^{2α}."""
    labels = []
    weights = []
    for k1, k2 in torus_wavevectors(k_max):
        for part in ("c", "s"):
            labels.append((k1, k2, part))
            weights.append(float(k1 * k1 + k2 * k2) ** alpha)
    if not labels:
        raise UsageError("k_max must be at least 1")
    return GalerkinSpace(
        v_weights=np.array(weights),
        mode_labels=tuple(labels),
        geometry="torus2d",
        alpha=alpha,
    )


def h_norm_sq(space: GalerkinSpace, v: StateVec) -> np.ndarray:
    """Squared H-norm Σ v_k²."""
    arr = space.check(v, "state")
    return np.einsum("...k,...k->...", arr, arr)


def v_norm_sq(space: GalerkinSpace, v: StateVec) -> np.ndarray:
    """Squared V-norm Σ w_k v_k²."""
    arr = space.check(v, "state")
    return np.einsum("...k,k,...k->...", arr, space.v_weights, arr)


def dual_norm_sq(space: GalerkinSpace, f: DualVec) -> np.ndarray:
    """Squared V*-norm Σ f_k² / w_k."""
    arr = space.check(f, "dual vector")
    return np.einsum("...k,k,...k->...", arr, 1.0 / space.v_weights, arr)


def h_inner(space: GalerkinSpace, u: StateVec, v: StateVec) -> np.ndarray:
    """H inner product of two (stacks of) states."""
    a = space.check(u, "state")
    b = space.check(v, "state")
    return np.einsum("...k,...k->...", a, b)


def dual_pair(space: GalerkinSpace, f: DualVec, v: StateVec) -> np.ndarray:
    """Dual pairing _{V*}⟨f, v⟩_V = Σ f_k v_k."""
    a = space.check(f, "dual vector")
    b = space.check(v, "state")
    return np.einsum("...k,...k->...", a, b)


def embed(space: GalerkinSpace, u: StateVec) -> DualVec:
    """Dual embedding of a state (H identified with its dual)."""
    return np.array(space.check(u, "state"), copy=True)


def sample_states(
    space: GalerkinSpace,
    radius_h: float,
    seed: int,
    count: int,
    offset: int = 0,
) -> np.ndarray:
    """Draw ``count`` states with ‖v‖_H ≤ radius_h.

    Direction is uniform on the unit sphere (normalised Gaussian vector) and the
    radius is uniform on [0, radius_h]. Draw ``i`` depends only on
    ``(seed, offset + i)``.

    Returns:
        Array of shape (count, dim)
    """
    if radius_h < 0.0:
        raise UsageError("radius_h must be nonnegative")
    idx = np.arange(offset, offset + count, dtype=np.int64)[:, None]
    cols = np.arange(space.dim, dtype=np.int64)[None, :]
    z = rng.standard_normal(seed, rng.STREAM_STATES, 0, idx, cols)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    norms[norms == 0.0] = 1.0
    r = radius_h * rng.uniform(seed, rng.STREAM_STATES, 1, idx[:, 0], 0)
    return z / norms[:, None] * r[:, None]


def sample_state(space: GalerkinSpace, radius_h: float, rng_seed: int) -> StateVec:
    """One random state with ‖v‖_H ≤ radius_h (see :func:`sample_states`)."""
    return sample_states(space, radius_h, rng_seed, 1)[0]


def sine_quadrature(
    space: GalerkinSpace, n_points: Optional[int] = None
) -> Tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """Midpoint quadrature on (0, π) for the sine basis.

    The rule integrates ``cos(nx)`` exactly for |n| < 2·n_points, which covers
    products of up to four basis functions or derivatives when
    ``n_points ≥ 2N + 1``.

    Returns:
        (nodes, weight, basis values (M, N), basis derivatives (M, N))
    """
    if space.geometry != "sine1d":
        raise UsageError("sine quadrature needs a sine1d space")
    m = n_points or 2 * space.dim + 2
    x = (np.arange(m) + 0.5) * np.pi / m
    k = np.array(space.mode_labels, dtype=np.float64)
    amp = math.sqrt(2.0 / np.pi)
    basis = amp * np.sin(np.outer(x, k))
    deriv = amp * np.cos(np.outer(x, k)) * k
    return x, np.pi / m, basis, deriv


def torus_quadrature(
    space: GalerkinSpace, n_points: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform grid tabulation of the torus basis.

    Averages over the M×M grid are exact for trigonometric polynomials whose
    frequencies stay below M in each direction, so triple products of modes with
    |k| ≤ k_max are exact once M > 3·k_max.

    Returns:
        (basis (P, 2, N) with components c, gradient (P, 2, 2, N) indexed
        [point, d, c, mode] = ∂_d e^c)
    """
    if space.geometry != "torus2d":
        raise UsageError("torus quadrature needs a torus2d space")
    kmax = max(max(abs(lab[0]), abs(lab[1])) for lab in space.mode_labels)
    m = n_points or 4 * kmax + 4
    g = 2.0 * np.pi * np.arange(m) / m
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    x1 = x1.reshape(-1)
    x2 = x2.reshape(-1)
    n = space.dim
    basis = np.zeros((x1.size, 2, n))
    grad = np.zeros((x1.size, 2, 2, n))
    for j, (k1, k2, part) in enumerate(space.mode_labels):
        kn = math.hypot(k1, k2)
        tau = np.array([-k2 / kn, k1 / kn])
        phase = k1 * x1 + k2 * x2
        if part == "c":
            val = math.sqrt(2.0) * np.cos(phase)
            dval = -math.sqrt(2.0) * np.sin(phase)
        else:
            val = math.sqrt(2.0) * np.sin(phase)
            dval = math.sqrt(2.0) * np.cos(phase)
        basis[:, :, j] = val[:, None] * tau[None, :]
        for d, kd in enumerate((k1, k2)):
            grad[:, d, :, j] = (kd * dval)[:, None] * tau[None, :]
    return basis, grad


def is_divergence_free_torus(labels: Sequence[Any]) -> bool:
    """True when every label is a realified half-lattice torus mode."""
    for lab in labels:
        if not (isinstance(lab, tuple) and len(lab) == 3 and lab[2] in ("c", "s")):
            return False
        k1, k2 = lab[0], lab[1]
        if (k1, k2) == (0, 0) or k1 < 0 or (k1 == 0 and k2 < 0):
            return False
    return True
