"""Counter-based deterministic noise.

Every random draw in the simulator is a pure function of
(scenario seed, stream name, sample index, channel), so replaying a run
or executing runs in parallel gives bit-identical results. Implemented
as a splitmix64 hash; no generator state is ever carried between draws.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(1 << 53)


def stream_id(name: str) -> int:
    """Stable integer id for a named noise stream."""
    return zlib.crc32(name.encode("utf-8"))


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _hash64(seed: int, stream: int, index: np.ndarray, channel: int) -> np.ndarray:
    # Chain the key components through splitmix so every coordinate
    # perturbs all output bits.
    z = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.asarray(index, dtype=np.uint64))
    z = _splitmix64(z + np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
    z = _splitmix64(z + np.uint64(channel & 0xFFFFFFFFFFFFFFFF))
    return z


def uniform(seed: int, stream: int, index, channel: int = 0):
    """Uniform draw(s) in [0, 1). `index` may be an int or an int array."""
    scalar = np.isscalar(index)
    idx = np.atleast_1d(np.asarray(index, dtype=np.uint64))
    with np.errstate(over="ignore"):
        bits = _hash64(seed, stream, idx, channel)
    u = (bits >> np.uint64(11)).astype(np.float64) / _U53
    return float(u[0]) if scalar else u


def normal(seed: int, stream: int, index, channel: int = 0):
    """Standard normal draw(s) via Box-Muller on two hashed uniforms."""
    scalar = np.isscalar(index)
    idx = np.atleast_1d(np.asarray(index, dtype=np.uint64))
    # Second uniform lives in a disjoint channel band so normals and
    # uniforms on the same stream never share hash inputs.
    u1 = uniform(seed, stream, idx, channel)
    u2 = uniform(seed, stream, idx, channel + (1 << 20))
    # Guard log(0); u1 in [0,1) so flip to (0,1].
    z = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * math.pi * u2)
    return float(z[0]) if scalar else z
