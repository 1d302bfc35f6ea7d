"""Named random streams derived from one integer seed."""

import hashlib

import numpy as np


def stream_seed(seed, name):
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, name):
    """Independent generator for component ``name`` (split, init, sampler, ...)."""
    return np.random.default_rng(stream_seed(seed, name))
