"""Named, seedable random streams.

Every stochastic routine takes a stream derived from (seed, *labels) so a
run is reproducible across machines: numpy's PCG64 has a stable, documented
output sequence, and SeedSequence mixing of the label hashes is likewise
portable.
"""

import zlib

import numpy as np


def stream(seed, *labels):
    """A numpy Generator keyed by a 64-bit seed plus string/int labels."""
    keys = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for lab in labels:
        if isinstance(lab, str):
            keys.append(zlib.crc32(lab.encode("utf-8")))
        else:
            keys.append(int(lab) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))
