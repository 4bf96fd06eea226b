"""
Labeled random streams.

Every random source of a run is derived from the run seed and a tuple of labels::

    stream(seed, "terrain", "tiles", 3)     # patch 3 of a run
    stream(seed, "commands", "train")       # command sampling of the training env
    stream(seed, "ppo", "minibatch")        # minibatch shuffling

Each label is hashed with CRC-32 into the ``spawn_key`` of a :class:`numpy.random.SeedSequence`
whose entropy is the seed; the resulting key drives a counter-based Philox generator. Streams with
different labels are statistically independent and do not depend on the order in which they are
created or consumed, so e.g. enabling the validation pool cannot shift the training streams.
"""
import zlib

import numpy as np


def stream_key(*labels):
    """
    Hash labels into a spawn key.

    Args:
        *labels: Strings or integers naming the stream.

    Returns:
        tuple: One 32-bit integer per label.
    """
    return tuple(zlib.crc32(str(label).encode('utf-8')) for label in labels)


def stream(seed, *labels):
    """
    Create the generator of a labeled stream.

    Args:
        seed (int): The run seed (unsigned 64-bit).
        *labels: Strings or integers naming the stream.

    Returns:
        numpy.random.Generator: A Philox-backed generator.
    """
    sequence = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=stream_key(*labels))
    return np.random.Generator(np.random.Philox(sequence))
