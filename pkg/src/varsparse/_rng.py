"""Deterministic seed derivation shared by sampling and experiment code."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by (seed, key).

    Streams with distinct keys are statistically independent, so work keyed
    on e.g. (environment, node) can run in any order, or in parallel, and
    still reproduce bit-identical draws.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key) into a single integer usable as a new root seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])
