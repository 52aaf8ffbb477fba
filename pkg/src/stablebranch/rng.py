"""Counter-based random streams keyed by (seed, replicate, lineage).

Every particle owns a 64-bit key.  Its i-th uniform is the SplitMix64
finalizer applied to ``key + (i+1) * GOLDEN``, and its c-th child gets key
``mix(key + (c+1) * CHILD)``.  Draws therefore depend only on the lineage
path, never on traversal order or on how replicates are spread over threads.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
CHILD = np.uint64(0xD1B54A32D192ED03)
REPLICATE = np.uint64(0x8CB92BA72F3D8DD7)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(nb.uint64(nb.uint64), cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def uniform(key, i):
    """i-th uniform of stream ``key``, in (0, 1]."""
    z = mix64(key + np.uint64(i + 1) * GOLDEN)
    return (float(z >> np.uint64(11)) + 1.0) * _TWO_M53


@nb.njit(cache=True, inline="always")
def child_key(key, c):
    return mix64(key + np.uint64(c + 1) * CHILD)


@nb.njit(cache=True)
def replicate_key(seed_key, rep):
    return mix64(seed_key ^ mix64(np.uint64(rep + 1) * REPLICATE))


def _mix_py(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def seed_key(seed: int) -> np.uint64:
    """Root key of a simulation seed (any Python int)."""
    return np.uint64(_mix_py(int(seed) ^ 0x2545F4914F6CDD1D))


def seed_plan(seed: int, replicates: int) -> np.ndarray:
    """Stream ids of replicates 0..R-1; a prefix of any longer plan."""
    root = int(seed_key(seed))
    out = np.empty(replicates, dtype=np.uint64)
    for r in range(replicates):
        out[r] = _mix_py(root ^ _mix_py(((r + 1) * 0x8CB92BA72F3D8DD7) & _MASK))
    return out


@nb.njit(cache=True)
def seed_plan_fast(seed_key, replicates):
    out = np.empty(replicates, dtype=np.uint64)
    for r in range(replicates):
        out[r] = replicate_key(seed_key, r)
    return out


@nb.njit(cache=True, inline="always")
def normal_pair(key, i):
    """Two independent standard normals from uniforms i and i+1 (Box-Muller)."""
    u1 = uniform(key, i)
    u2 = uniform(key, i + 1)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)
