"""Multi-head clustering network: a 2-layer encoder feeding K softmax heads.

Every head maps the shared feature space to a soft assignment over C clusters,
so one forward pass yields K clusterings of the same batch. The forward pass
is expressed on the :mod:`clusterlab.graph` engine so the training losses can
differentiate through it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, broadcast_columns

CHECKPOINT_HEADER = "clusterlab-checkpoint v1"


@dataclass
class AssignmentMatrix:
    """Column-stochastic soft assignments of a batch; shape (clusters, batch)."""

    values: np.ndarray
    clustering_id: int

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def hard_labels(self) -> np.ndarray:
        """Argmax per column; ties resolve to the lowest cluster index."""
        return self.values.argmax(axis=0)


@dataclass
class ModelParams:
    """Weights of the encoder and of the K projection heads."""

    input_dim: int
    hidden_dim: int
    feature_dim: int
    n_clusterings: int
    n_clusters: int
    seed: int
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.input_dim, self.hidden_dim, self.feature_dim,
            self.n_clusterings, self.n_clusters, self.seed,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    def apply_gradient(self, grads: dict[str, np.ndarray], learning_rate: float) -> None:
        for name, tensor in self.tensors.items():
            tensor -= learning_rate * grads[name]


def parameter_names(n_clusterings: int) -> list[str]:
    names = ["enc_w1", "enc_b1", "enc_w2", "enc_b2"]
    for k in range(n_clusterings):
        names += [f"head_w{k}", f"head_b{k}"]
    return names


def init(seed: int, input_dim: int, hidden_dim: int, feature_dim: int,
         n_clusterings: int, n_clusters: int) -> ModelParams:
    """Seed-deterministic init: Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    for name, value in [("input_dim", input_dim), ("hidden_dim", hidden_dim),
                        ("feature_dim", feature_dim), ("n_clusterings", n_clusterings),
                        ("n_clusters", n_clusters)]:
        if value < 1:
            raise ValueError(f"{name} must be positive, got {value}")
    if n_clusters < 2:
        raise ValueError(f"n_clusters must be at least 2, got {n_clusters}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0]))
    tensors = {
        "enc_w1": rng.standard_normal((hidden_dim, input_dim)) / np.sqrt(input_dim),
        "enc_b1": np.zeros((hidden_dim, 1)),
        "enc_w2": rng.standard_normal((feature_dim, hidden_dim)) / np.sqrt(hidden_dim),
        "enc_b2": np.zeros((feature_dim, 1)),
    }
    for k in range(n_clusterings):
        tensors[f"head_w{k}"] = rng.standard_normal((n_clusters, feature_dim)) / np.sqrt(feature_dim)
        tensors[f"head_b{k}"] = np.zeros((n_clusters, 1))
    return ModelParams(input_dim, hidden_dim, feature_dim,
                       n_clusterings, n_clusters, int(seed), tensors)


def declare_parameter_leaves(g: Graph, params: ModelParams) -> dict[str, int]:
    """Declare one differentiable leaf per parameter tensor, named after it."""
    return {name: g.leaf(name, params.tensors[name].shape)
            for name in parameter_names(params.n_clusterings)}


def assignment_nodes(g: Graph, param_leaves: dict[str, int], x: int,
                     n_clusterings: int, tag: str = "") -> list[int]:
    """Wire encoder + heads over an (input_dim, n) input node.

    Returns one column-stochastic (clusters, n) node per head. Parameter
    leaves may be shared across several views of the same graph.
    """
    n = g.shape(x)[1]
    pre1 = g.add(g.matmul(param_leaves["enc_w1"], x),
                 broadcast_columns(g, param_leaves["enc_b1"], n))
    hidden = g.tanh(pre1)
    features = g.add(g.matmul(param_leaves["enc_w2"], hidden),
                     broadcast_columns(g, param_leaves["enc_b2"], n))
    heads = []
    for k in range(n_clusterings):
        logits = g.add(g.matmul(param_leaves[f"head_w{k}"], features),
                       broadcast_columns(g, param_leaves[f"head_b{k}"], n))
        heads.append(g.softmax_cols(logits, label=f"assignments{tag}[{k}]"))
    return heads


def forward(params: ModelParams, batch: np.ndarray) -> list[AssignmentMatrix]:
    """Soft assignments of a (n, input_dim) batch under every head."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"batch must be a nonempty (n, input_dim) array, got {batch.shape}")
    if batch.shape[1] != params.input_dim:
        raise ValueError(f"batch has {batch.shape[1]} features, model expects {params.input_dim}")
    g = Graph()
    leaves = declare_parameter_leaves(g, params)
    x = g.leaf("batch", (params.input_dim, batch.shape[0]), differentiable=False)
    heads = assignment_nodes(g, leaves, x, params.n_clusterings)
    bindings = dict(params.tensors)
    bindings["batch"] = batch.T
    values = g.evaluate_nodes(bindings, heads)
    return [AssignmentMatrix(v, k) for k, v in enumerate(values)]


# -- checkpoint io ------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """Text checkpoint: versioned header, dims, then each tensor at 17 sig digits."""
    lines = [CHECKPOINT_HEADER,
             f"seed {params.seed}",
             "dims {} {} {} {} {}".format(params.input_dim, params.hidden_dim,
                                          params.feature_dim, params.n_clusterings,
                                          params.n_clusters)]
    for name in parameter_names(params.n_clusterings):
        tensor = params.tensors[name]
        lines.append(f"tensor {name} {tensor.shape[0]} {tensor.shape[1]}")
        for row in tensor:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a recognized checkpoint (bad header)")
    seed = int(lines[1].split()[1])
    dims = [int(v) for v in lines[2].split()[1:]]
    input_dim, hidden_dim, feature_dim, n_clusterings, n_clusters = dims
    tensors: dict[str, np.ndarray] = {}
    i = 3
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "tensor":
            raise ValueError(f"{path}: expected tensor record at line {i + 1}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        block = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        arr = np.array(block, dtype=np.float64)
        if arr.shape != (rows, cols):
            raise ValueError(f"{path}: tensor '{name}' malformed at line {i + 1}")
        tensors[name] = arr
        i += 1 + rows
    expected = set(parameter_names(n_clusterings))
    if set(tensors) != expected:
        raise ValueError(f"{path}: checkpoint tensors do not match declared dims")
    return ModelParams(input_dim, hidden_dim, feature_dim,
                       n_clusterings, n_clusters, seed, tensors)
