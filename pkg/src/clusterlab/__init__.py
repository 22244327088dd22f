"""Desk-scale lab for diversity-controlled clustering ensembles.

One encoder feeds K softmax clustering heads trained jointly under a base
mutual-information objective plus a hinge penalty on inter-clustering
similarity, whose upper bound is steered by a feedback controller toward a
user-set target. Finished ensembles are scored (ACC/NMI/ARI/CNF) and
aggregated into a single consensus clustering.
"""

from .graph import (DomainError, Graph, GraphError, OpCounter, ShapeError,
                    backward, evaluate, finite_difference_check)
from .model import AssignmentMatrix, ModelParams, forward, init
from .base_loss import JointDistribution, joint_distribution, mi_loss
from .diversity import (SimilarityMatrix, aggregate_similarity, diversity_loss,
                        joint_loss, similarity_matrix, total_loss)
from .controller import (MemoryBank, ThresholdState, maybe_update,
                         measure_similarity, push, update_threshold)
from .metrics import (accuracy, ari, cnf, contingency_table, nmi,
                      optimal_assignment, pairwise_nmi_matrix)
from .consensus import Ensemble, coassociation, consensus_labels, select
from .data import Dataset, augment, gen_blobs, load_csv
from .run import ExperimentConfig, RunReport, TrainingDiverged, run_many, train

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix", "Dataset", "DomainError", "Ensemble",
    "ExperimentConfig", "Graph", "GraphError", "JointDistribution",
    "MemoryBank", "ModelParams", "OpCounter", "RunReport", "ShapeError",
    "SimilarityMatrix", "ThresholdState", "TrainingDiverged", "accuracy",
    "aggregate_similarity", "ari", "augment", "backward", "cnf",
    "coassociation", "consensus_labels", "contingency_table",
    "diversity_loss", "evaluate", "finite_difference_check", "forward",
    "gen_blobs", "init", "joint_distribution", "joint_loss", "load_csv",
    "maybe_update", "measure_similarity", "mi_loss", "nmi",
    "optimal_assignment", "pairwise_nmi_matrix", "push", "run_many",
    "select", "similarity_matrix", "total_loss", "train", "update_threshold",
]
