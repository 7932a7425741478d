"""Deterministic seed derivation and counter-based random generators.

Every random decision in the package (weight init, shuffling, partitioning,
routing, peer choice, task schedules) flows through a generator obtained
here, so a whole experiment is a pure function of its seeds.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix(*parts: int) -> int:
    """Fold integer components into a single 64-bit seed (SplitMix64 chain).

    Order-sensitive, so mix(a, b) != mix(b, a). Used to derive independent
    sub-seeds for separate concerns from one experiment seed.
    """
    acc = _GOLDEN
    for part in parts:
        acc = (acc + (int(part) & MASK64)) & MASK64
        z = acc
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        z ^= z >> 31
        acc = z
    return acc


def generator(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


def node_stream(seed: int, node_id: int) -> int:
    """Per-node seed that leaves node 0 on the base stream.

    Node 0 gets the seed unchanged, so a single-node run is bit-identical
    to the equivalent unpartitioned run.
    """
    return (int(seed) ^ ((int(node_id) * _GOLDEN) & MASK64)) & MASK64
