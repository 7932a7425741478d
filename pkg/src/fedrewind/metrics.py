"""Cross-evaluation of federation models and the fleet-level metrics.

Every node model is tested against every node's private test set,
yielding an N x N accuracy matrix. Three scalars summarize it:

- federation accuracy: mean of all N^2 entries (higher is better)
- federation fairness: Bessel-corrected standard deviation of the N^2
  entries (lower means accuracy is spread more evenly across nodes)
- personalized accuracy: mean of the diagonal, each model on its own
  node's test set
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, Shard
from .nn import ModelParams, accuracy


@dataclass(frozen=True)
class CrossAccuracyMatrix:
    """acc[i, j] = accuracy of node i's model on node j's test set."""

    acc: np.ndarray
    round: int

    def __post_init__(self):
        acc = np.array(self.acc, dtype=np.float64)
        if acc.ndim != 2:
            raise ValueError("accuracy matrix must be 2-d")
        if acc.size == 0:
            raise ValueError("accuracy matrix is empty")
        if (acc < 0).any() or (acc > 1).any():
            raise ValueError("accuracies must lie in [0, 1]")
        acc.setflags(write=False)
        object.__setattr__(self, "acc", acc)

    @property
    def num_models(self) -> int:
        return self.acc.shape[0]

    @property
    def num_test_sets(self) -> int:
        return self.acc.shape[1]


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    fa: float
    ff: float
    pfa: float
    per_node_acc: tuple[float, ...]


def cross_accuracy(
    models: Sequence[ModelParams],
    shards: Sequence[Shard],
    data: Dataset,
    round: int = 0,
) -> CrossAccuracyMatrix:
    """Evaluate every model against every shard's test split.

    Row order follows `models`, column order follows `shards`; a square
    matrix therefore requires equal counts. Rows are filled i-major so
    repeated calls accumulate bit-identically.
    """
    if len(models) != len(shards):
        raise ValueError(
            f"model count {len(models)} does not match shard count {len(shards)}"
        )
    tests = [s.test_batch(data) for s in shards]
    n = len(models)
    acc = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            acc[i, j] = accuracy(models[i], tests[j])
    return CrossAccuracyMatrix(acc, round)


def single_model_row(
    model: ModelParams,
    shards: Sequence[Shard],
    data: Dataset,
    round: int = 0,
) -> CrossAccuracyMatrix:
    """1 x N matrix for a lone model (joint baseline, global server model)."""
    acc = np.array(
        [[accuracy(model, s.test_batch(data)) for s in shards]]
    )
    return CrossAccuracyMatrix(acc, round)


def federation_accuracy(m: CrossAccuracyMatrix) -> float:
    """Mean of all matrix entries."""
    return float(m.acc.mean())


def federation_fairness(m: CrossAccuracyMatrix) -> float:
    """Sample standard deviation of all entries, ddof=1."""
    if m.acc.size < 2:
        raise ValueError("fairness needs at least two matrix entries")
    return float(m.acc.std(ddof=1))


def personalized_fa(m: CrossAccuracyMatrix) -> float:
    """Mean of the diagonal; for a single-row matrix, the row mean."""
    if m.acc.shape[0] == 1:
        return float(m.acc.mean())
    if m.acc.shape[0] != m.acc.shape[1]:
        raise ValueError("diagonal undefined for a non-square matrix")
    return float(np.diagonal(m.acc).mean())


def summarize(m: CrossAccuracyMatrix) -> MetricsRecord:
    """Bundle the three fleet metrics plus the per-node diagonal."""
    if m.acc.shape[0] == 1:
        diag = m.acc[0]
        ff = math.nan  # single model: spread across nodes is not comparable
    else:
        diag = np.diagonal(m.acc)
        ff = federation_fairness(m)
    return MetricsRecord(
        round=m.round,
        fa=federation_accuracy(m),
        ff=ff,
        pfa=personalized_fa(m),
        per_node_acc=tuple(float(v) for v in diag),
    )
