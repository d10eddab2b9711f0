"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for stage ``name`` that is independent of other stages.

    The stream depends only on ``(seed, name)``, so adding draws to one stage
    never shifts the draws seen by another.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def child_seed(seed: int, name: str) -> int:
    """Derive a plain integer seed for APIs that take ``seed`` rather than a generator."""
    return int(substream(seed, name).integers(0, 2**31 - 1))
