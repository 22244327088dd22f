"""Feedback control of the similarity upper bound.

A FIFO memory bank keeps the most recent hard assignments of every clustering,
aligned by sample. Every ``update_interval`` steps the measured inter-clustering
similarity (mean pairwise NMI over the bank) is compared against the user's
target, and the bound is nudged multiplicatively: down when the ensemble is
too similar, up otherwise, clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .metrics import mean_pairwise_nmi

DEFAULT_CAPACITY = 10_000
DEFAULT_MOMENTUM = 0.01
DEFAULT_INTERVAL = 20


class MemoryBank:
    """Ring buffer of hard labels, one aligned row of entries per clustering.

    ``push`` mutates in place and returns the bank (single-writer usage).
    """

    def __init__(self, n_clusterings: int, n_clusters: int,
                 capacity: int = DEFAULT_CAPACITY, ready_min: int | None = None):
        if n_clusterings < 1 or n_clusters < 1 or capacity < 1:
            raise ValueError("n_clusterings, n_clusters and capacity must be positive")
        self.n_clusterings = n_clusterings
        self.n_clusters = n_clusters
        self.capacity = capacity
        self.ready_min = capacity if ready_min is None else min(ready_min, capacity)
        self._buffer = np.zeros((n_clusterings, capacity), dtype=np.int64)
        self._write_pos = 0
        self.fill_count = 0

    @property
    def ready(self) -> bool:
        return self.fill_count >= self.ready_min

    def contents(self) -> np.ndarray:
        """Stored labels in FIFO order (oldest first), shape (K, fill_count)."""
        if self.fill_count < self.capacity:
            return self._buffer[:, : self.fill_count].copy()
        return np.concatenate(
            [self._buffer[:, self._write_pos:], self._buffer[:, : self._write_pos]],
            axis=1,
        )


def push(bank: MemoryBank, hard_labels) -> MemoryBank:
    """Append one aligned batch of hard labels per clustering, evicting FIFO."""
    labels = np.asarray(hard_labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[0] != bank.n_clusterings:
        raise ValueError(
            f"expected ({bank.n_clusterings}, n) labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= bank.n_clusters):
        raise ValueError(f"labels must lie in [0, {bank.n_clusters})")
    n = labels.shape[1]
    if n >= bank.capacity:
        bank._buffer[:] = labels[:, n - bank.capacity:]
        bank._write_pos = 0
        bank.fill_count = bank.capacity
        return bank
    first = min(n, bank.capacity - bank._write_pos)
    bank._buffer[:, bank._write_pos: bank._write_pos + first] = labels[:, :first]
    if first < n:
        bank._buffer[:, : n - first] = labels[:, first:]
    bank._write_pos = (bank._write_pos + n) % bank.capacity
    bank.fill_count = min(bank.fill_count + n, bank.capacity)
    return bank


def measure_similarity(bank: MemoryBank) -> float | None:
    """Mean pairwise NMI over the bank, or None while the bank is not ready."""
    if not bank.ready or bank.n_clusterings < 2:
        return None
    return mean_pairwise_nmi(list(bank.contents()))


@dataclass(frozen=True)
class ThresholdState:
    """Similarity upper bound with its multiplicative update schedule."""

    d: float = 1.0
    m: float = DEFAULT_MOMENTUM
    interval: int = DEFAULT_INTERVAL
    step_counter: int = 0
    last_measured: float | None = None


def update_threshold(state: ThresholdState, measured: float, target: float) -> ThresholdState:
    """One multiplicative update of the bound, clamped to [0, 1]."""
    if measured > target:
        d = max(state.d * (1.0 - state.m), 0.0)
    else:
        d = min(state.d * (1.0 + state.m), 1.0)
    return replace(state, d=d, last_measured=measured)


def maybe_update(state: ThresholdState, bank: MemoryBank, target: float,
                 step: int) -> ThresholdState:
    """Apply one threshold update on schedule steps once the bank is ready."""
    state = replace(state, step_counter=step)
    if step % state.interval != 0:
        return state
    measured = measure_similarity(bank)
    if measured is None:
        return state
    return update_threshold(state, measured, target)
