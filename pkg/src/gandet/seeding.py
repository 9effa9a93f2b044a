"""Deterministic derivation of independent child seeds.

Every random stream in the package (data synthesis, contamination,
parameter init, the latent prior, batch order) gets its own seed derived
from one user-facing seed, so streams stay independent and reproducible.
"""

from __future__ import annotations

import hashlib

_SEED_MASK = (1 << 63) - 1


def child_seed(seed: int, *tags: object) -> int:
    """Derive a stable 63-bit seed from ``seed`` and a label path.

    The same (seed, tags) pair always yields the same child seed, on any
    platform.
    """
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK
