"""Deterministic random-stream derivation.

Every run draws all of its randomness from a single root seed. Named
substreams (environment resets, filter edge sampling, policy noise,
inflow arrivals) are derived from that seed so each nondeterminism
source can be reproduced or varied in isolation.
"""
from __future__ import annotations

import numpy as np


def substream(root_seed: int, *scope: str | int) -> np.random.Generator:
    """Return an independent generator for ``(root_seed, *scope)``.

    Scope parts may be strings (stream names) or integers (episode or
    draw indices). The same scope always yields the same stream.
    """
    words: list[int] = [int(root_seed) & 0xFFFFFFFF]
    for part in scope:
        if isinstance(part, str):
            words.extend(part.encode("utf-8"))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
