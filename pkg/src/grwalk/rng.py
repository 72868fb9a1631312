"""Reproducible random streams.

All Monte Carlo code draws from Philox counter-based generators keyed by a
64-bit seed.  Independent sub-streams (per path chunk, per walker index)
come from ``jumped``, so results are bit-identical however the chunks are
scheduled across workers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "substreams"]


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream ``index`` of the given seed."""
    bg = np.random.Philox(key=np.uint64(seed))
    if index:
        bg = bg.jumped(index)
    return np.random.Generator(bg)


def substreams(seed: int, count: int):
    """Independent generators for chunked Monte Carlo."""
    return [stream(seed, i) for i in range(count)]
