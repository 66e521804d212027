"""Deterministic, named random streams.

Every stochastic component in the toolkit draws from a counter-based
Philox generator keyed by a SHA-256 hash of a label tuple.  Streams with
different labels never collide, and the same label always reproduces the
same stream on any platform, which is what makes sweep cells, resets and
fitters replayable.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    """Collapse a label tuple into a stable 128-bit integer key."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def named_rng(*parts) -> np.random.Generator:
    """Fresh Philox generator for the given label tuple."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
