import zlib
from typing import Union

import numpy as np


def tag_key(tag: Union[str, int]) -> int:
    """Stable integer key for a stream tag"""
    if isinstance(tag, int):
        return tag
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, *key: Union[str, int]) -> np.random.Generator:
    """
    Counter-based random stream for (seed, key...).

    Streams are addressed by their key, not drawn from a parent generator, so a
    replicate gets the same numbers no matter which worker runs it.

    Args:
        seed: Run seed
        key: Stream address, e.g. ("mp-eval", replicate_index)

    Returns:
        numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(tag_key(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))

