"""Seeded, splittable random streams.

Every chain gets its own ``numpy.random.Generator`` derived from the run seed
and the chain id through ``SeedSequence`` spawn keys, so chains can run on any
number of threads and still reproduce bit-for-bit.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def chain_streams(seed: int, n_chains: int) -> list[np.random.Generator]:
    return [stream(seed, c) for c in range(n_chains)]


def chain_seed(seed: int, chain: int) -> int:
    """A 64-bit integer identifying the stream of ``chain`` (for manifests)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
