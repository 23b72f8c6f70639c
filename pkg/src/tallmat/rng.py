"""Counter-based random numbers.

Each element is a pure function of ``(seed, global element index)``, so lazily
generated matrices come out identical regardless of how rows are split into
partitions, slices or worker threads.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 array arithmetic wraps silently
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def seed_key(seed: int, stream: int = 0) -> np.uint64:
    base = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    base = _mix(base * _GAMMA + np.uint64(stream & 0xFFFFFFFF))
    return base[0]


def uniforms(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) for the given uint64 counters."""
    c = np.asarray(counters, dtype=np.uint64)
    bits = _mix(c * _GAMMA + key)
    return (bits >> np.uint64(11)).astype(np.float64) * _TWO_NEG53


def normals(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Standard normals via Box-Muller on counters ``2c`` and ``2c + 1``."""
    c = np.asarray(counters, dtype=np.uint64) * np.uint64(2)
    u1 = uniforms(key, c)
    u2 = uniforms(key, c + np.uint64(1))
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2)
