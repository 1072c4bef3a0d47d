"""Counter-based random streams.

Every random number is a pure function of ``(seed, purpose, unit, counter)``,
hashed with the splitmix64 finaliser. No generator state is carried between
calls, so results cannot depend on evaluation order or on how units are split
across threads.
"""
from __future__ import annotations

import numba
import numpy as np

# purpose tags; one independent family of streams per tag
INIT_STATE = 1
INIT_COCYCLE = 2
PARAMETERS = 3
COCYCLE_REFILL = 4
INIT_MEASURE = 5
NOISE = 6
SUBSAMPLE = 7

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_UNIT = np.uint64(0xD1B54A32D192ED03)
_CTR = np.uint64(0xAEF17502108EF2D9)


@numba.njit(inline="always", cache=True)
def _mix(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def stream_key(seed, purpose):
    """64-bit key for one (seed, purpose) family of streams."""
    k = _mix(np.uint64(seed) + _GOLDEN)
    return _mix(k ^ (np.uint64(purpose) * _GOLDEN + _GOLDEN))


def key_for(seed: int, purpose: int) -> np.uint64:
    return np.uint64(stream_key(np.uint64(seed), np.uint64(purpose)))


@numba.njit(inline="always", cache=True)
def bits64(key, unit, counter):
    z = _mix(np.uint64(key) ^ (np.uint64(unit) * _UNIT))
    return _mix(z + (np.uint64(counter) + np.uint64(1)) * _CTR)


@numba.njit(inline="always", cache=True)
def uniform(key, unit, counter):
    """Uniform double in [0, 1) with 53 random bits."""
    return np.float64(bits64(key, unit, counter) >> np.uint64(11)) * 1.1102230246251565e-16


@numba.njit(inline="always", cache=True)
def normal(key, unit, counter):
    """Standard normal via Box-Muller on two consecutive counters."""
    u1 = 1.0 - uniform(key, unit, np.uint64(2) * np.uint64(counter))
    u2 = uniform(key, unit, np.uint64(2) * np.uint64(counter) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@numba.njit(cache=True)
def _uniform_array(key, units, counter, out):
    for i in range(units.size):
        out[i] = uniform(key, units[i], counter)


@numba.njit(cache=True)
def _normal_array(key, units, counter, out):
    for i in range(units.size):
        out[i] = normal(key, units[i], counter)


@numba.njit(cache=True)
def _bits_array(key, units, counter, out):
    for i in range(units.size):
        out[i] = bits64(key, units[i], counter)


def uniforms(seed: int, purpose: int, n: int, counter: int = 0, start: int = 0) -> np.ndarray:
    """``n`` uniforms, one per unit index ``start .. start+n-1``."""
    out = np.empty(n)
    _uniform_array(key_for(seed, purpose), np.arange(start, start + n, dtype=np.uint64),
                   np.uint64(counter), out)
    return out


def normals(seed: int, purpose: int, n: int, counter: int = 0, start: int = 0) -> np.ndarray:
    out = np.empty(n)
    _normal_array(key_for(seed, purpose), np.arange(start, start + n, dtype=np.uint64),
                  np.uint64(counter), out)
    return out


def random_bits(seed: int, purpose: int, n: int, counter: int = 0, start: int = 0) -> np.ndarray:
    out = np.empty(n, dtype=np.uint64)
    _bits_array(key_for(seed, purpose), np.arange(start, start + n, dtype=np.uint64),
                np.uint64(counter), out)
    return out
