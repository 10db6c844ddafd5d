"""Named substreams derived from a single root seed.

Every source of randomness in a run (data generation, weight init,
shuffling, sampling) gets its own child seed so that reruns are
reproducible and substreams never collide.
"""
from __future__ import annotations

import hashlib


def derive_seed(root: int, *names: object) -> int:
    """Stable 63-bit child seed for the substream identified by `names`."""
    key = ":".join([str(int(root)), *(str(n) for n in names)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
