import zlib

import numpy as np


def stage_rng(seed, label):
    """Independent generator for one named pipeline stage derived from a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))
