"""Deterministic seed derivation.

All randomness in a run flows from one root seed. Component generators
are derived as ``SeedSequence([root, crc32(tag), *indices])`` so any
component (a round, a client, a policy cell) can be re-created in
isolation and results never depend on execution order.
"""

import zlib

import numpy as np


def derive_seq(root, tag, *indices) -> np.random.SeedSequence:
    entropy = [int(root), zlib.crc32(tag.encode("ascii")), *[int(i) for i in indices]]
    return np.random.SeedSequence(entropy)


def derive_rng(root, tag, *indices) -> np.random.Generator:
    return np.random.default_rng(derive_seq(root, tag, *indices))
