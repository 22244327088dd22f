"""Clustering quality and similarity metrics.

All label-based metrics go through a contingency table and are invariant to
relabeling clusters in either argument. NMI uses natural-log entropies with
the arithmetic-mean normalization; accuracy matches clusters to classes with
an exact minimum-cost assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (C_a, C_b) nonnegative ints
    n: int


def _as_labels(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {arr.shape}")
    return arr


def _check_aligned(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"label vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("label vectors must be nonempty")


def contingency_table(a, b) -> ContingencyTable:
    a, b = _as_labels(a), _as_labels(b)
    _check_aligned(a, b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ca, cb = ai.max() + 1, bi.max() + 1
    counts = np.bincount(ai * cb + bi, minlength=ca * cb).reshape(ca, cb)
    return ContingencyTable(counts, int(a.shape[0]))


def _entropy(freq: np.ndarray, n: int) -> float:
    p = freq[freq > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Mutual information normalized by the mean entropy; 0 when both are constant."""
    table = contingency_table(a, b)
    counts, n = table.counts, table.n
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    h_a, h_b = _entropy(rows, n), _entropy(cols, n)
    if h_a + h_b == 0.0:
        return 0.0
    nz = counts > 0
    nij = counts[nz].astype(np.float64)
    outer = np.outer(rows, cols)[nz].astype(np.float64)
    mi = float((nij / n * (np.log(nij * n) - np.log(outer))).sum())
    value = mi / ((h_a + h_b) / 2.0)
    return min(max(value, 0.0), 1.0)


def ari(a, b) -> float:
    """Adjusted Rand index from the contingency table, exact in integer arithmetic.

    When the adjustment denominator is zero the index is 1 for identical
    partitions and 0 otherwise.
    """
    table = contingency_table(a, b)
    if table.n < 2:
        raise ValueError("adjusted Rand index needs at least 2 samples")
    counts = table.counts

    def comb2(v) -> int:
        v = int(v)
        return v * (v - 1) // 2

    sum_ij = int(sum(comb2(v) for v in counts.reshape(-1)))
    sum_a = int(sum(comb2(v) for v in counts.sum(axis=1)))
    sum_b = int(sum(comb2(v) for v in counts.sum(axis=0)))
    pairs = comb2(table.n)
    # denominator * 2 * pairs, kept integral so the zero test is exact
    denom = pairs * (sum_a + sum_b) - 2 * sum_a * sum_b
    if denom == 0:
        one_per_row = bool(np.all((counts > 0).sum(axis=1) == 1))
        one_per_col = bool(np.all((counts > 0).sum(axis=0) == 1))
        return 1.0 if one_per_row and one_per_col else 0.0
    numer = 2 * (pairs * sum_ij - sum_a * sum_b)
    return numer / denom


def _hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (O(n^3) potentials method).

    Returns perm with perm[i] = column assigned to row i.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row held by column j, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = ~used[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            open_cols = np.where(~used[1:])[0]
            rel = open_cols[np.argmin(minv[1:][open_cols])]
            delta = minv[rel + 1]
            j1 = rel + 1
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][~used[1:]] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm


def _matching_cost(cost: np.ndarray, perm: np.ndarray) -> float:
    return float(cost[np.arange(len(perm)), perm].sum())


def optimal_assignment(cost) -> np.ndarray:
    """Cost-minimizing permutation; among optima, the lexicographically smallest.

    Tie handling fixes one row at a time: the smallest column whose choice
    still admits an optimal completion (checked by re-solving the remainder)
    is kept. Intended for desk-scale matrices (C up to a few dozen).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if cost.shape[0] == 0:
        raise ValueError("cost matrix must be nonempty")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    best = _matching_cost(cost, _hungarian(cost))
    tol = 1e-9 * max(1.0, abs(best))
    chosen: list[int] = []
    open_cols = list(range(n))
    prefix = 0.0
    for row in range(n):
        for j in open_cols:
            candidate = prefix + cost[row, j]
            rest_rows = np.arange(row + 1, n)
            rest_cols = [c for c in open_cols if c != j]
            if rest_rows.size:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                candidate += _matching_cost(sub, _hungarian(sub))
            if candidate <= best + tol:
                chosen.append(j)
                open_cols.remove(j)
                prefix += cost[row, j]
                break
        else:  # pragma: no cover - an optimal completion always exists
            raise RuntimeError("no optimal completion found; numeric tolerance too tight")
    return np.array(chosen, dtype=np.int64)


def accuracy(pred, truth) -> float:
    """Fraction correct under the best one-to-one cluster-to-class matching."""
    table = contingency_table(pred, truth)
    counts = table.counts
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    perm = optimal_assignment(padded.max() - padded)
    matched = padded[np.arange(size), perm].sum()
    return float(matched / table.n)


def cnf(assignments) -> float:
    """Mean over clusterings and samples of the top assignment probability."""
    tops = [a.values.max(axis=0) for a in assignments]
    return float(np.concatenate(tops).mean())


def pairwise_nmi_matrix(labelings) -> np.ndarray:
    """Symmetric K x K matrix of inter-clustering NMIs with a unit diagonal."""
    labelings = [np.asarray(lab) for lab in labelings]
    k = len(labelings)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = nmi(labelings[i], labelings[j])
    return out


def mean_pairwise_nmi(labelings) -> float:
    """Average NMI over unordered clustering pairs (the measured similarity)."""
    matrix = pairwise_nmi_matrix(labelings)
    k = matrix.shape[0]
    if k < 2:
        raise ValueError("need at least two clusterings")
    iu = np.triu_indices(k, 1)
    return float(matrix[iu].mean())
