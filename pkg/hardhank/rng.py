"""Named, counter-based random streams.

Every random draw in the package comes from ``stream(seed, name, *counters)``.
The stream is a Philox generator keyed by the root seed and a spawn key derived
from the stream name and integer counters, so draws do not depend on call order
or on how work is split across threads.
"""
import zlib
from typing import Tuple

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def spawn_key(name: str, *counters: int) -> Tuple[int, ...]:
    """Return the SeedSequence spawn key for a named stream."""
    for counter in counters:
        if int(counter) < 0:
            raise ValueError(f"stream counters must be non-negative, got {counter}")
    return (_name_key(name),) + tuple(int(c) for c in counters)


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, counters)``."""
    if int(seed) < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(name, *counters))
    return np.random.Generator(np.random.Philox(sequence))


__all__ = ["spawn_key", "stream"]
