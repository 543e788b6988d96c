"""Deterministic RNG streams derived from one top-level seed.

Every subsystem draws from its own child stream, identified by a fixed
label, so adding draws in one subsystem never perturbs another.  Streams
for per-item work (e.g. one negative pool per positive edge) append
counters to the label, which keeps selections reproducible even if items
are processed out of order or in parallel.
"""

from __future__ import annotations

import numpy as np

_LABELS = {
    "generator": 0,
    "split": 1,
    "model": 2,
    "sampler": 3,
    "train": 4,
    "eval": 5,
}


def subsystem_rng(seed: int, label: str, *counters: int) -> np.random.Generator:
    """Child generator for (seed, label, counters...), independent per key."""
    key = (_LABELS[label],) + tuple(int(c) for c in counters)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
