"""Deterministic seed derivation.

Per-instance seeds are a stable 64-bit hash of ``(master_seed, instance)``; every
stochastic component then draws from its own purpose-labelled substream so that
adding a consumer never shifts the numbers another consumer sees.
"""
import hashlib
from typing import Union

import numpy as np

SeedPart = Union[int, str]


def stable_hash64(*parts: SeedPart) -> int:
    """Return a platform-independent unsigned 64-bit hash of ``parts``."""
    key = ":".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def instance_seed(master_seed: int, instance: int) -> int:
    """Seed of Monte Carlo instance ``instance``."""
    return stable_hash64(master_seed, instance)


def substream_seed(seed: int, label: str, *extra: SeedPart) -> int:
    """Seed of the ``label`` substream (optionally indexed, e.g. by round)."""
    return stable_hash64(seed, label, *extra)


def substream(seed: int, label: str, *extra: SeedPart) -> np.random.Generator:
    """Independent generator for one purpose within one instance."""
    return np.random.default_rng(substream_seed(seed, label, *extra))
