"""Named, order-independent random substreams derived from one run seed."""

import zlib

import numpy as np


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Independent generator keyed by (seed, name, indices...).

    Stream identity depends only on the key, never on call order or thread
    layout, so per-image streams stay reproducible under any parallel
    schedule.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("ascii"))]
    key.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in indices)
    return np.random.default_rng(key)
