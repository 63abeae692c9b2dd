"""
Counter-based random numbers keyed by integer coordinates.

Every draw is a pure function of a key ``(seed, stream, level, index, column)``:
the key is folded through the SplitMix64 finaliser and the resulting 64-bit words
are turned into uniforms (53-bit mantissa) and normals (Box-Muller, cosine
branch). Nothing is stateful, so any sub-array of a noise path can be regenerated
on its own and arrays of draws evaluate vectorised over all coordinates.

Streams in use:

    STREAM_NOISE   Brownian increments of the driving Wiener process
    STREAM_STATES  random states for audits and samplers
    STREAM_CONTROL random controls for gradient checks and probes
"""

from typing import Union

import numpy as np

ArrayLike = Union[int, np.ndarray]

STREAM_NOISE = 0
STREAM_STATES = 1
STREAM_CONTROL = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53
_MASK64 = (1 << 64) - 1


def _as_u64(x: ArrayLike) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    if arr.dtype.kind == "i":
        # two's complement reinterpretation keeps negative step indices distinct
        return np.ascontiguousarray(arr, dtype=np.int64).view(np.uint64)
    if arr.dtype.kind == "O":
        # python ints above the int64 range arrive as object arrays
        flat = [int(v) & _MASK64 for v in np.ravel(arr).tolist()]
        return np.array(flat, dtype=np.uint64).reshape(arr.shape)
    raise TypeError(f"integer key expected, got dtype {arr.dtype}")


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)


def _key(seed, stream, level, index, column, lane) -> np.ndarray:
    z = _splitmix(_as_u64(seed))
    for part in (stream, level, index, column, lane):
        z = _splitmix(z ^ _as_u64(part))
    return z


def derive_seed(seed: int, index: int) -> int:
    """Derive the seed of ensemble member ``index`` from a master seed."""
    return int(_key(seed, 0xD5, 0, index, 0, 0))


def derive_seeds(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Vectorised :func:`derive_seed` for indices ``offset .. offset+count-1``."""
    idx = np.arange(offset, offset + count, dtype=np.int64)
    return _key(seed, 0xD5, 0, idx, 0, 0)


def uniform(seed, stream, level, index, column) -> np.ndarray:
    """Uniform draws on [0, 1), broadcast over all key coordinates."""
    z = _key(seed, stream, level, index, column, 0)
    return (z >> _S11).astype(np.float64) * _TWO_M53


def standard_normal(seed, stream, level, index, column) -> np.ndarray:
    """Standard normal draws, broadcast over all key coordinates."""
    z1 = _key(seed, stream, level, index, column, 1)
    z2 = _key(seed, stream, level, index, column, 2)
    u1 = ((z1 >> _S11).astype(np.float64) + 1.0) * _TWO_M53
    u2 = (z2 >> _S11).astype(np.float64) * _TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def brownian_increments(
    seed: ArrayLike,
    step: ArrayLike,
    dt: float,
    n_cols: int,
    refinement: int = 0,
    stream: int = STREAM_NOISE,
) -> np.ndarray:
    """Brownian increments over cells ``[step*dt, (step+1)*dt)``.

    Cells of the base lattice (width ``dt * 2**refinement``) draw their increment
    directly from the key ``(seed, stream, 0, base_cell, column)``. Each further
    level splits a parent increment by a Brownian bridge, the left child being
    ``inc/2 + sqrt(h)/2 * Z`` with ``Z`` keyed by ``(seed, stream, level,
    parent, column)`` and the right child the remainder. Summing the two halves of
    a refined cell therefore reproduces the coarser increment.

    Args:
        seed: Seed or array of seeds (broadcast against ``step``)
        step: Absolute step index or array of indices (may be negative)
        dt: Cell width at the requested resolution
        n_cols: Number of noise columns K
        refinement: Number of bridge levels below the base lattice
        stream: Key stream

    Returns:
        Array of shape ``broadcast(seed, step).shape + (n_cols,)``
    """
    seed_arr = _as_u64(seed)[..., None]
    step_arr = np.asarray(step, dtype=np.int64)[..., None]
    cols = np.arange(n_cols, dtype=np.uint64)
    h = dt * 2.0**refinement
    base = step_arr >> np.int64(refinement)
    inc = np.sqrt(h) * standard_normal(seed_arr, stream, 0, base, cols)
    for level in range(1, refinement + 1):
        parent = step_arr >> np.int64(refinement - level + 1)
        child = step_arr >> np.int64(refinement - level)
        z = standard_normal(seed_arr, stream, level, parent, cols)
        left = 0.5 * inc + 0.5 * np.sqrt(h) * z
        inc = np.where(child % 2 == 0, left, inc - left)
        h *= 0.5
    return inc
