"""Deterministic seed derivation.

All randomness in the package flows from one master seed.  Sub-seeds are
derived by hashing the master seed together with string labels, so any
artifact can be regenerated from the seed recorded in its config dump.
Python's builtin hash() is salted per process and must not be used here.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit sub-seed for (master, label, label, ...)."""
    key = "|".join([str(int(master))] + [str(l) for l in labels])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
