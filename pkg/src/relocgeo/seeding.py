"""Named random sub-streams derived from one user seed."""
import numpy as np

DEFAULT_SEED = 42
_STREAMS = {"ransac": 1, "synth": 2, "noise": 3, "scene": 4}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; identical for identical (seed, name)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(_STREAMS[name],)))
