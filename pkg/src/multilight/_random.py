import zlib

import numpy as np


def stable_key(value) -> int:
    if isinstance(value, int):
        return value
    return zlib.crc32(str(value).encode("utf-8"))


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; same inputs, same stream."""
    if seed is None or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(stable_key(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit child seed, recorded in reports so a run can be replayed."""
    return int(rng_for(seed, *keys).integers(0, 2**63 - 1))
