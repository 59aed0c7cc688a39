"""Deterministic seed derivation.

Every random draw in the package flows from an integer seed through
these helpers, so runs are replayable from the seeds recorded in run
directories.  The mixer is splitmix64; it is cheap, stateless, and
stable across platforms.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix(seed: int, *parts: int) -> int:
    """Fold extra integers into a seed, one splitmix round per part."""
    x = splitmix64(seed & _MASK)
    for p in parts:
        x = splitmix64((x ^ (p & _MASK)) & _MASK)
    return x


def spawn(seed: int, n: int) -> list[int]:
    """n distinct child seeds of a parent seed."""
    return [mix(seed, i) for i in range(n)]
