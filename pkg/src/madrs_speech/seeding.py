"""Stable derivation of per-component RNG seeds from one experiment seed.

Every source of randomness in the toolkit (fold shuffling, validation
sampling, weight init, batch order, dropout, bootstrap resampling) draws
from a seed derived here, so a single top-level seed pins the whole run.
Python's builtin ``hash`` is salted per process and cannot be used.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Map an arbitrary label tuple to a stable 63-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
