"""Named random streams derived from one seed."""
import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_entropy(key: Key) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Return an independent generator for ``hash(seed, *keys)``.

    The same (seed, keys) always yields the same stream, no matter which
    thread asks for it or in what order.
    """
    entropy = [_key_entropy(seed)] + [_key_entropy(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
