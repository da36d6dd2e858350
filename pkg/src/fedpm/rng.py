"""Named, versioned random streams.

Every source of randomness in a run is derived from the master seed plus a
tuple of stream names, so two components never share state and results do
not depend on call order across components.
"""
import hashlib

import numpy as np

STREAM_VERSION = 1


def _words(seed, names):
    payload = f"fedpm/v{STREAM_VERSION}/{int(seed)}/" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def stream(seed, *names):
    """Return a ``numpy.random.Generator`` for the stream ``names`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_words(seed, names))))


def philox_key(seed, *names):
    """128-bit Philox key (two uint64 words) for a counter-based stream."""
    w = _words(seed, names)
    lo = w[0] | (w[1] << 32)
    hi = w[2] | (w[3] << 32)
    return np.array([lo, hi], dtype=np.uint64)


def counter_bits(seed, names, count):
    """``count`` raw uint64 words; word ``i`` depends only on (seed, names, i)."""
    bitgen = np.random.Philox(key=philox_key(seed, *names))
    return bitgen.random_raw(count).astype(np.uint64)
