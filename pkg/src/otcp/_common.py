"""Small shared helpers: seeded RNG construction and threshold arithmetic."""

import hashlib
import math

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 is pinned explicitly so that identical seeds reproduce
    # bit-identical streams regardless of numpy's default_rng choice.
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, payload: bytes) -> int:
    """Stable 64-bit sub-seed from a base seed and arbitrary bytes."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode("ascii"))
    h.update(b"|")
    h.update(payload)
    return int.from_bytes(h.digest(), "big")


def guarded_ceil(t: float, n: int) -> int:
    """Ceiling of t with a guard against products like 0.9 * 10 landing
    a few ulps above an integer; n anchors the guard's magnitude."""
    frac = t - math.floor(t)
    if 0.0 < frac <= 1e-9:
        t -= 1e-12 * max(n, 1)
    return int(math.ceil(t))
