"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox stream addressed
by ``(seed, *path)``.  A stream's output depends only on its address, never on
how many other streams were consumed before it, so Monte Carlo loops can be
split across any number of workers without changing a single bit of output.
"""

from __future__ import annotations

import numpy as np

# Lane tags keeping independent randomness sources apart: reusing one master
# seed for the design, the noise and the target must not correlate them.
DESIGN = 1
NOISE = 2
TARGET = 3
WIDTH = 4
FIXED_POINT = 5
DIRECTION = 6
KERNEL = 7
RIP = 8
EXPERIMENT = 9

_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _seed_sequence(seed: int, path: tuple) -> np.random.SeedSequence:
    entropy = int(seed) & int(_U64)
    key = tuple(int(p) & int(_U64) for p in path)
    return np.random.SeedSequence(entropy=entropy, spawn_key=key)


def bit_generator(seed: int, *path) -> np.random.Philox:
    return np.random.Philox(seed=_seed_sequence(seed, path))


def stream(seed: int, *path) -> np.random.Generator:
    """Generator addressed by (seed, *path)."""
    return np.random.Generator(bit_generator(seed, *path))


def subseed(seed: int, *path) -> int:
    """Derive a 63-bit child seed; pure function of the address."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))


def gaussian_rows(seed: int, path: tuple, n: int, d: int) -> np.ndarray:
    """(n, d) standard normals; row i comes from substream i of the address.

    Row i is a pure function of (seed, path, i): workers may fill disjoint
    row ranges and still assemble the exact same matrix.
    """
    base = bit_generator(seed, *path)
    out = np.empty((n, d))
    for i in range(n):
        out[i] = np.random.Generator(base.jumped(i)).standard_normal(d)
    return out
