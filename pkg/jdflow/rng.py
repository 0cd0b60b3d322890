"""Keyed counter-based random streams.

Every random draw in the package comes from a Philox generator whose 128-bit
key is `(seed, path_index * STREAM.COUNT + tag)`. Streams with different keys
are independent and each one starts from counter zero, so a scenario or a
probe sample is reproducible from its key alone, whatever order or thread it
is generated in.
"""

import numpy as np

from jdflow.defs import STREAM
from jdflow.errors import ArgumentError

_U64 = (1 << 64) - 1


def stream_key(seed: int, path_index: int, tag: int) -> np.ndarray:
    if not 0 <= tag < STREAM.COUNT:
        raise ArgumentError(f"invalid stream tag: {tag!r}")
    if path_index < 0:
        raise ArgumentError(f"path_index must be non-negative, got {path_index!r}")

    return np.array(
        [int(seed) & _U64, (int(path_index) * STREAM.COUNT + tag) & _U64],
        dtype=np.uint64,
    )


def substream(seed: int, path_index: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, path_index, tag)))
