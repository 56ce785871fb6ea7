"""Counter-based random numbers shared bit-for-bit by both sweep backends.

Every random draw is a pure function of (key, counter), so results do not
depend on thread count or on the order in which sites are visited.

    mix64(z):  z ^= z >> 30; z *= 0xbf58476d1ce4e5b9
               z ^= z >> 27; z *= 0x94d049bb133111eb
               z ^= z >> 31
    bits(key, c) = mix64(key + (c + 1) * GOLDEN)       (mod 2^64)
    uniform      = ((bits >> 11) + 0.5) * 2^-53        in (0, 1)
    normal       = sqrt(-2 log u1) * cos(2 pi u2)      (Box-Muller)

A site update in sweep ``s`` at site ``k`` of a grid with ``n`` sites uses
counters ``(s * n + k) * 256 + slot`` with slot in [0, 256).

Seed splitting: child ``i`` of master seed ``m`` is ``mix64(m + (i + 1) * GOLDEN)``.
"""
from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
MASK = (1 << 64) - 1
SLOTS = 256
_U53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * np.pi


def mix64_int(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    return z ^ (z >> 31)


def child_seed(master: int, i: int) -> int:
    return mix64_int((int(master) & MASK) + (int(i) + 1) * GOLDEN)


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(M2)
    return z ^ (z >> np.uint64(31))


def bits(key: int, counter: np.ndarray) -> np.ndarray:
    c = np.asarray(counter, dtype=np.uint64)
    return mix64(np.uint64(int(key) & MASK) + (c + np.uint64(1)) * np.uint64(GOLDEN))


def uniform(key: int, counter) -> np.ndarray:
    b = bits(key, counter)
    return ((b >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def normal(key: int, c1, c2) -> np.ndarray:
    u1 = uniform(key, c1)
    u2 = uniform(key, c2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def site_counters(sweep: int, n_sites: int, sites: np.ndarray) -> np.ndarray:
    """Base counters (slot 0) for the given flat site indices in one sweep."""
    s = np.uint64(int(sweep) * int(n_sites) & MASK)
    return (s + np.asarray(sites, dtype=np.uint64)) * np.uint64(SLOTS)
