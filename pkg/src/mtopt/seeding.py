"""Counter-based seed splitting.

Every run owns a single root seed; all random streams (data order, weight
init, dropout, method noise) are derived from it with a stable label so that
different methods trained from the same root seed see the same data order.
"""

import zlib

import numpy as np

__all__ = ["spawn_rng", "child_seed_sequence"]


def _label_key(label) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def child_seed_sequence(root_seed: int, *labels) -> np.random.SeedSequence:
    """Derive a child SeedSequence from a root seed and a stable label path."""
    return np.random.SeedSequence(root_seed, spawn_key=tuple(_label_key(x) for x in labels))


def spawn_rng(root_seed: int, *labels) -> np.random.Generator:
    """Independent generator for stream `labels` of run `root_seed`."""
    return np.random.default_rng(child_seed_sequence(root_seed, *labels))
