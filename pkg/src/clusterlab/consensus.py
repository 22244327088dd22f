"""Ensemble aggregation: loss-based selection, co-association, agglomeration.

Three single-solution extraction strategies are supported: ``A`` returns the
lowest-loss clustering as-is, ``B`` aggregates all clusterings, and ``C``
aggregates the 10 lowest-loss clusterings. Aggregation builds the co-association
matrix of the selected labelings and cuts an average-linkage merge tree at the
target cluster count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("A", "B", "C")
HYBRID_POOL_SIZE = 10


@dataclass
class Ensemble:
    """Aligned hard labelings plus the per-clustering base-loss scores."""

    labelings: np.ndarray  # (K, N) ints
    losses: np.ndarray     # (K,) floats
    n_clusters: int

    def __post_init__(self):
        self.labelings = np.asarray(self.labelings, dtype=np.int64)
        self.losses = np.asarray(self.losses, dtype=np.float64)
        if self.labelings.ndim != 2 or self.labelings.shape[0] == 0:
            raise ValueError("ensemble needs at least one labeling")
        if self.losses.shape != (self.labelings.shape[0],):
            raise ValueError("one loss per labeling is required")


def select(ensemble: Ensemble, strategy: str) -> np.ndarray:
    """Indices of the clusterings each strategy feeds to the consensus step.

    Loss ties resolve to the lower clustering index; indices are returned in
    ascending order.
    """
    k = ensemble.labelings.shape[0]
    if strategy == "A":
        return np.array([int(np.argmin(ensemble.losses))])
    if strategy == "B":
        return np.arange(k)
    if strategy == "C":
        keep = min(HYBRID_POOL_SIZE, k)
        order = np.argsort(ensemble.losses, kind="stable")[:keep]
        return np.sort(order)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def coassociation(labelings) -> np.ndarray:
    """Fraction of labelings placing each sample pair in the same cluster."""
    labelings = np.asarray(labelings, dtype=np.int64)
    if labelings.ndim == 1:
        labelings = labelings[None, :]
    if labelings.shape[0] < 1:
        raise ValueError("need at least one labeling")
    n = labelings.shape[1]
    out = np.zeros((n, n))
    for row in labelings:
        out += row[:, None] == row[None, :]
    return out / labelings.shape[0]


def consensus_labels(coassoc: np.ndarray, n_clusters: int) -> np.ndarray:
    """Cut an average-linkage tree over distance 1 - coassociation at n_clusters.

    Ties in the merge distance resolve to the lexicographically lowest active
    index pair, and output labels are renumbered by first occurrence, so the
    result is deterministic.
    """
    coassoc = np.asarray(coassoc, dtype=np.float64)
    n = coassoc.shape[0]
    if coassoc.ndim != 2 or coassoc.shape[1] != n:
        raise ValueError(f"co-association matrix must be square, got {coassoc.shape}")
    if not 1 <= n_clusters <= n:
        raise ValueError(f"cannot cut {n} samples into {n_clusters} clusters")
    dist = 1.0 - coassoc
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(n)
    parent = np.arange(n)  # slot of the cluster each sample currently belongs to
    active = np.ones(n, dtype=bool)
    for _ in range(n - n_clusters):
        flat = int(np.argmin(dist))  # first minimum in row-major order
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        # average linkage: merge j into i, weights by cluster size
        mask = active.copy()
        mask[i] = mask[j] = False
        merged = (sizes[i] * dist[i, mask] + sizes[j] * dist[j, mask]) / (sizes[i] + sizes[j])
        dist[i, mask] = merged
        dist[mask, i] = merged
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        sizes[i] += sizes[j]
        active[j] = False
        parent[parent == j] = i
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for sample in range(n):
        slot = int(parent[sample])
        if slot not in seen:
            seen[slot] = len(seen)
        labels[sample] = seen[slot]
    return labels


def consensus_for_strategy(ensemble: Ensemble, strategy: str) -> np.ndarray:
    """Full extraction pipeline for one strategy; A skips the consensus step."""
    indices = select(ensemble, strategy)
    if strategy == "A":
        return ensemble.labelings[indices[0]].copy()
    return consensus_labels(coassociation(ensemble.labelings[indices]),
                            ensemble.n_clusters)
