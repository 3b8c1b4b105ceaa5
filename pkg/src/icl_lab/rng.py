"""Seed stream derivation.

Every random draw in the package goes through :func:`stream`. A stream is a
``numpy.random.Generator`` backed by the counter-based Philox-4x64 bit
generator, keyed by a ``SeedSequence`` whose entropy is the root seed and
whose spawn key is ``(crc32(purpose), *extra)``. Two streams with different
purposes or extra keys are statistically independent, and any stream can be
replayed from ``(root_seed, purpose, *extra)`` alone.
"""

import zlib

import numpy as np

ALGORITHM = "numpy.SeedSequence(root, spawn_key=(crc32(purpose), *extra)) -> Philox4x64"


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = (purpose_key(purpose),) + tuple(int(e) for e in extra)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def sub_seed(seed: int, purpose: str, *extra: int) -> int:
    """A 63-bit integer seed derived from ``(seed, purpose, *extra)``."""
    return int(stream(seed, purpose, *extra).integers(0, 2**63 - 1))
