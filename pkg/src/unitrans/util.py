"""Seeding helpers.

Every random draw in the generators flows through a stream derived from a
(master seed, tag, ...) tuple, hashed with blake2b so streams are stable
across runs, platforms, and interpreter hash randomization.
"""

import hashlib

import numpy as np


def stream(*parts) -> np.random.Generator:
    """Return an RNG keyed by the given parts (ints and strings)."""
    material = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def stable_hash(*parts) -> int:
    """64-bit integer hash of the parts, stable across runs."""
    material = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "little")
