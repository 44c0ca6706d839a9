"""Deterministic child-seed derivation.

Child streams are keyed by (master seed, component name, index) through a
cryptographic hash, so adding one consumer never perturbs the draws seen
by any other and results are independent of execution schedule.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, component: str, index: int = 0) -> int:
    """64-bit seed for the (master, component, index) stream."""
    payload = f"{int(master)}|{component}|{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")
