"""Deterministic derivation of independent per-purpose random seeds."""

from __future__ import annotations

import numpy as np

# Stream tags keep sibling generators (training shuffles, dropout masks,
# candidate selection, ...) independent within one run even though they
# all descend from a single master seed.
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_SCORE = 3
STREAM_SELECT = 4
STREAM_COLLECT = 5
STREAM_ALEATORIC = 6
STREAM_PROBE = 7
STREAM_GMM_FIT = 8
STREAM_GMM_SAMPLE = 9
STREAM_QBC = 10
STREAM_ARRIVALS = 11


def derive_seed(master: int, *parts: int) -> int:
    """Mix a master seed with context tags into a fresh 32-bit seed.

    Mixing through SeedSequence keeps derived streams statistically
    independent even when the tags are small consecutive integers, and
    inserting a new tagged stream never shifts the existing ones.
    """
    seq = np.random.SeedSequence([int(master)] + [int(p) for p in parts])
    return int(seq.generate_state(1, np.uint32)[0])
