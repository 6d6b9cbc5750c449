"""Random number conventions.

Every random quantity in spx is drawn from NumPy's ``PCG64`` bit generator
(the 128-bit LCG with XSL-RR 64-bit output permutation) seeded through
``numpy.random.SeedSequence``. Both algorithms are fixed and documented by
NumPy, so a seed produces the same stream on every platform.

Sub-streams are derived by hashing a tuple of non-negative integers with
``SeedSequence``; ``derive_seed(seed, 3, 1)`` is a plain u64 that can be
recorded in manifests and fed back to any function taking ``seed``.
"""

from __future__ import annotations

import numpy as np

from spx.errors import InvalidArgument

U64_MAX = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def generator(seed: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent u64 seed from ``seed`` and integer ``keys``."""
    entropy = [check_seed(seed)] + [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise InvalidArgument("derivation keys must be non-negative")
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def random_bits(seed: int, count: int) -> np.ndarray:
    """Return ``count`` fair bits as uint8.

    Bits are taken from consecutive raw 64-bit PCG64 outputs, least
    significant bit first. This bypasses NumPy's distribution layer so the
    bit stream is fully specified by the bit generator alone.
    """
    n_words = -(-count // 64)
    bitgen = np.random.PCG64(np.random.SeedSequence(check_seed(seed)))
    words = bitgen.random_raw(n_words).astype("<u8")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    return bits[:count]
