"""Deterministic fan-out of one root seed into independent named streams.

Every consumer of randomness gets its own generator derived from
(root seed, domain label, index), so adding a stream in one place never
shifts the draws of another and identical seeds reproduce identical runs.
"""

import zlib

import numpy as np


def _domain_key(domain: str) -> int:
    return zlib.crc32(domain.encode())


def seed_sequence(seed: int, domain: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _domain_key(domain)])


def make_rng(seed: int, domain: str, index: int = 0) -> np.random.Generator:
    """Generator for one named stream."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, _domain_key(domain), index])
    )


def env_seeds(seed: int, domain: str, count: int) -> np.ndarray:
    """64-bit seeds for a pool of environment instances."""
    return seed_sequence(seed, domain).generate_state(count, np.uint64)
