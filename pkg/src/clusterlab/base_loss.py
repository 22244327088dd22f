"""Mutual-information base clustering loss over two noise-augmented views.

The joint distribution over cluster pairs is estimated from the two views'
soft assignments, symmetrized, and scored by negative mutual information, so
minimizing it rewards assignments that are confident, balanced, and stable
under the augmentation noise. This fills the "base loss" slot of the joint
objective; the diversity terms are agnostic to this choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, clamp_floor, sum_all
from .model import AssignmentMatrix

# Floor applied to joint-distribution entries before the logs.
LOG_EPS = 1e-12


@dataclass
class JointDistribution:
    """Symmetric C x C distribution of co-assignments across the two views."""

    values: np.ndarray


def joint_distribution(p_view1: AssignmentMatrix,
                       p_view2: AssignmentMatrix) -> JointDistribution:
    if p_view1.n_samples != p_view2.n_samples:
        raise ValueError(
            f"views have different widths: {p_view1.n_samples} vs {p_view2.n_samples}")
    if p_view1.clustering_id != p_view2.clustering_id:
        raise ValueError("views must come from the same clustering head")
    j = (p_view1.values @ p_view2.values.T) / p_view1.n_samples
    return JointDistribution((j + j.T) / 2.0)


def mi_loss(j: JointDistribution) -> float:
    """Negative mutual information of the joint; in [-log C, 0]."""
    values = np.maximum(j.values, LOG_EPS)
    row = values.sum(axis=1, keepdims=True)
    col = values.sum(axis=0, keepdims=True)
    return float(-(values * (np.log(values) - np.log(row) - np.log(col))).sum())


# -- graph builders -----------------------------------------------------------

def joint_distribution_nodes(g: Graph, p_view1: int, p_view2: int) -> int:
    n = g.shape(p_view1)[1]
    j = g.scale(g.matmul(p_view1, g.transpose(p_view2)), 1.0 / n)
    return g.scale(g.add(j, g.transpose(j)), 0.5)


def mi_loss_nodes(g: Graph, joint: int, tag: str = "") -> int:
    c = g.shape(joint)[0]
    clamped = clamp_floor(g, joint, LOG_EPS)
    ones_col = g.constant(np.ones((c, 1)))
    ones_row = g.constant(np.ones((1, c)))
    # (C,1) marginal tiled across columns / (1,C) marginal tiled down rows
    log_row = g.matmul(g.log(g.matmul(clamped, ones_col)), ones_row)
    log_col = g.matmul(ones_col, g.log(g.matmul(ones_row, clamped)))
    pointwise = g.sub(g.sub(g.log(clamped), log_row), log_col)
    return g.scale(sum_all(g, g.mul(clamped, pointwise)), -1.0,
                   label=f"main_loss{tag}")
