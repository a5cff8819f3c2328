"""Stable seed derivation.

Every stochastic component (weight init, shuffles, participant sampling,
noise injection, input pools) draws from its own derived seed so that runs
are reproducible and sub-streams stay independent of execution order.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Map a label path like (master, "train", round, client) to a 64-bit seed."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
