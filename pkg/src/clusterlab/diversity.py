"""Inter-clustering similarity and the diversity-controlling hinge loss.

Two clusterings A and B are compared through the cosine similarity of their
cluster membership vectors over the current mini-batch. Each cluster of A is
matched with its most similar cluster of B, the matches are averaged, and any
excess of that aggregate over an upper bound ``d`` is penalized linearly. The
per-clustering joint loss adds this penalty (averaged over the K-1 partners)
to the base clustering loss, and the training objective is the mean of the
joint losses.

Everything exists in two forms: plain ``numpy`` functions on assignment
matrices, and builders that wire the same computation into a
:class:`~clusterlab.graph.Graph` for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NORM_EPS, Graph
from .model import AssignmentMatrix


@dataclass
class SimilarityMatrix:
    """Pairwise cluster-to-cluster cosine similarities in [0, 1]."""

    values: np.ndarray
    pair: tuple[int, int]


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    return m / np.sqrt((m * m).sum(axis=1, keepdims=True) + NORM_EPS)


def similarity_matrix(p_a: AssignmentMatrix, p_b: AssignmentMatrix) -> SimilarityMatrix:
    """Cosine similarity between every cluster membership row of A and of B."""
    if p_a.n_samples != p_b.n_samples:
        raise ValueError(
            f"batch widths differ: {p_a.n_samples} vs {p_b.n_samples}")
    values = _normalize_rows(p_a.values) @ _normalize_rows(p_b.values).T
    return SimilarityMatrix(values, (p_a.clustering_id, p_b.clustering_id))


def aggregate_similarity(s: SimilarityMatrix) -> float:
    """Average over A's clusters of the best-matching similarity in B."""
    return float(s.values.max(axis=1).mean())


def diversity_loss(s_aggr: float, d: float) -> float:
    """Hinge penalty on aggregate similarity exceeding the upper bound d."""
    return max(s_aggr - d, 0.0)


def joint_loss(k: int, main_losses: list[float],
               assignments: list[AssignmentMatrix], d: float) -> float:
    """Base loss of clustering k plus its mean diversity penalty against the rest."""
    n_clusterings = len(assignments)
    total = float(main_losses[k])
    if n_clusterings < 2:
        return total
    penalty = 0.0
    for other in range(n_clusterings):
        if other == k:
            continue
        s = similarity_matrix(assignments[k], assignments[other])
        penalty += diversity_loss(aggregate_similarity(s), d)
    return total + penalty / (n_clusterings - 1)


def total_loss(joint_losses: list[float]) -> float:
    """Training objective: the mean of the per-clustering joint losses."""
    return float(np.mean(joint_losses))


# -- graph builders -----------------------------------------------------------

@dataclass
class DiversityGraphInfo:
    """Node bookkeeping for one wired diversity objective.

    ``similarity_matmul_nodes`` holds the one matmul that builds each ordered
    pair's similarity matrix, in pair order; ``hinge_nodes`` the matching
    hinge penalties. Both have exactly K*(K-1) entries.
    """

    pair_order: list[tuple[int, int]] = field(default_factory=list)
    similarity_matmul_nodes: list[int] = field(default_factory=list)
    hinge_nodes: list[int] = field(default_factory=list)
    diversity_term_nodes: list[int] = field(default_factory=list)
    joint_nodes: list[int] = field(default_factory=list)
    total_node: int = -1


def similarity_nodes(g: Graph, normalized_a: int, normalized_b_t: int,
                     info: DiversityGraphInfo | None = None,
                     pair: tuple[int, int] | None = None) -> int:
    """Similarity matrix from pre-normalized membership rows (one matmul per pair)."""
    label = None if pair is None else f"similarity[{pair[0]},{pair[1]}]"
    node = g.matmul(normalized_a, normalized_b_t, label=label)
    if info is not None:
        info.pair_order.append(pair)
        info.similarity_matmul_nodes.append(node)
    return node


def aggregate_nodes(g: Graph, similarity: int) -> int:
    return g.mean(g.row_max(similarity))


def diversity_nodes(g: Graph, s_aggr: int, bound: int,
                    info: DiversityGraphInfo | None = None,
                    pair: tuple[int, int] | None = None) -> int:
    label = None if pair is None else f"diversity[{pair[0]},{pair[1]}]"
    node = g.hinge(g.sub(s_aggr, bound), label=label)
    if info is not None:
        info.hinge_nodes.append(node)
    return node


def total_loss_nodes(g: Graph, main_loss_nodes: list[int],
                     assignment_heads: list[int], bound: int) -> DiversityGraphInfo:
    """Wire the full objective over already-built head assignments.

    ``main_loss_nodes`` supplies one scalar base-loss node per clustering;
    ``assignment_heads`` the (clusters, n) soft assignments the diversity
    terms compare. The directed pair sum is wired literally: each ordered
    pair gets its own similarity matrix and hinge term.
    """
    n_clusterings = len(assignment_heads)
    if len(main_loss_nodes) != n_clusterings:
        raise ValueError("one main loss node per clustering is required")
    info = DiversityGraphInfo()
    normalized = [g.normalize_rows(h) for h in assignment_heads]
    normalized_t = [g.transpose(n) for n in normalized]
    for k in range(n_clusterings):
        joint = main_loss_nodes[k]
        if n_clusterings >= 2:
            partner_sum = None
            for other in range(n_clusterings):
                if other == k:
                    continue
                s = similarity_nodes(g, normalized[k], normalized_t[other],
                                     info, (k, other))
                penalty = diversity_nodes(g, aggregate_nodes(g, s), bound,
                                          info, (k, other))
                partner_sum = penalty if partner_sum is None else g.add(partner_sum, penalty)
            term = g.scale(partner_sum, 1.0 / (n_clusterings - 1),
                           label=f"diversity_term[{k}]")
            info.diversity_term_nodes.append(term)
            joint = g.add(joint, term, label=f"joint[{k}]")
        else:
            info.diversity_term_nodes.append(g.constant(np.zeros(1), label="diversity_term[0]"))
        info.joint_nodes.append(joint)
    acc = info.joint_nodes[0]
    for node in info.joint_nodes[1:]:
        acc = g.add(acc, node)
    info.total_node = g.scale(acc, 1.0 / n_clusterings, label="total_loss")
    return info
