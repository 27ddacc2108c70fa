"""Named, independent random streams derived from one run seed."""

import zlib

import numpy as np


def substream(seed, name):
    """Return a Generator for the sub-stream `name` of `seed`.

    Streams with different names are statistically independent and do not
    shift when another stream draws more numbers.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def round_half_up(x):
    # Python's round() is banker's rounding; counts here use half-up.
    return int(np.floor(x + 0.5))
