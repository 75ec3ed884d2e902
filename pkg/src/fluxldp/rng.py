"""Counter-based uniform streams (Philox4x32-10).

Every random number is a pure function of ``(seed, replica, counter)``, so a
replica's stream does not depend on which other replicas share its batch or
on the order in which batches are run.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10):
    """Vectorized Philox4x32 block function.

    ``counter`` is a sequence of four uint32-valued arrays (broadcastable),
    ``key`` a pair of uint32 scalars or arrays. Returns four uint64 arrays
    holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0 = np.asarray(key[0], dtype=np.uint64) & _MASK32
    k1 = np.asarray(key[1], dtype=np.uint64) & _MASK32
    for i in range(rounds):
        if i:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniform_block(seed: int, replica, step):
    """Three uniforms per (replica, step): one 53-bit, two 32-bit.

    The 53-bit value lies strictly inside (0, 1) and is meant for waiting
    times; the other two lie in [0, 1).
    """
    replica = np.asarray(replica, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    key = split_seed(seed)
    x0, x1, x2, x3 = philox4x32(
        (step & _MASK32, step >> _SHIFT32, replica & _MASK32, replica >> _SHIFT32), key
    )
    hi = (x0 >> np.uint64(5)).astype(np.float64)
    lo = (x1 >> np.uint64(6)).astype(np.float64)
    u_time = (hi * 67108864.0 + lo + 0.5) / 9007199254740992.0
    u_a = x2.astype(np.float64) / 4294967296.0
    u_b = x3.astype(np.float64) / 4294967296.0
    return u_time, u_a, u_b
