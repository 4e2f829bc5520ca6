"""Counter-based random streams.

Every random draw in the package comes from a Philox stream keyed by a
64-bit seed plus a tuple of integer indices (purpose, path block, step, ...).
Two streams with different keys are statistically independent, and a given
key always reproduces the same numbers, no matter how the work is split
across chunks or threads.

Normals are produced by the inverse-CDF transform of open-interval uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

# stream purposes
PATHS = 1
CONTINUATION = 2
TRAIN = 3
LOWER = 4
UPPER = 5
INITIAL = 6
INIT_NET = 7
NONCALLABLE = 8

# paths per outer stream; chunking must respect this for reproducibility
PATH_BLOCK = 1024
# continuation paths per (k, n) sub-stream
CONT_BLOCK = 1024

_MASK64 = (1 << 64) - 1


def _key(seed: int, key: tuple[int, ...]) -> np.random.SeedSequence:
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if any(k < 0 for k in key):
        raise ValueError(f"stream key components must be non-negative: {key}")
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(_key(seed, key)))


def derive_seed(seed: int, *key: int) -> int:
    """Derive a child 64-bit seed; used to separate training/evaluation streams."""
    return int(_key(seed, key).generate_state(1, np.uint64)[0])


def uniforms(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53 bits of resolution."""
    raw = gen.bit_generator.random_raw(int(np.prod(shape, dtype=np.int64)))
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return u.reshape(shape)


def normals(gen: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    z = ndtri(uniforms(gen, shape))
    return z if dtype == np.float64 else z.astype(dtype)


def block_normals(seed: int, key: tuple[int, ...], start: int, count: int,
                  row_shape: tuple[int, ...], block: int = PATH_BLOCK,
                  dtype=np.float64) -> np.ndarray:
    """Normals for rows ``start .. start+count-1`` laid out in fixed-size blocks.

    Row ``i`` always receives the same numbers regardless of ``start``/``count``.
    """
    return _blocked(seed, key, start, count, row_shape, block,
                    lambda g, shape: normals(g, shape, dtype))


def block_uniforms(seed: int, key: tuple[int, ...], start: int, count: int,
                   row_shape: tuple[int, ...], block: int = PATH_BLOCK) -> np.ndarray:
    return _blocked(seed, key, start, count, row_shape, block, uniforms)


def _blocked(seed, key, start, count, row_shape, block, draw):
    if count <= 0:
        return np.empty((0, *row_shape))
    first, last = start // block, (start + count - 1) // block
    parts = []
    for b in range(first, last + 1):
        lo = max(start, b * block) - b * block
        hi = min(start + count, (b + 1) * block) - b * block
        # draw the full prefix so row positions inside the block are stable
        values = draw(stream(seed, *key, b), (hi, *row_shape))
        parts.append(values[lo:hi])
    return parts[0] if len(parts) == 1 else np.concatenate(parts)
