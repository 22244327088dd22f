"""Minimal reverse-mode differentiation engine over dense float64 arrays.

A :class:`Graph` is a flat, append-only list of primitive nodes over named
leaf tensors. Nodes are created in topological order, shapes are checked at
construction time, and values are plain ``numpy`` float64 arrays. The engine
supports exactly the primitives needed by the clustering models and losses in
this package; there is no broadcasting beyond scalar-times-tensor, which keeps
every shape error local to the node that caused it.

Gradient conventions (deliberately deterministic):

* ``hinge`` has subgradient 0 at exactly 0;
* ``row_max`` routes its gradient to the lowest-index maximizer of each row.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

Shape = tuple[int, ...]

# Added under the row norm (inside the square root) so that an all-zero row
# normalizes to zeros instead of NaN, with a finite gradient everywhere.
NORM_EPS = 1e-12


class GraphError(Exception):
    """Base error for graph construction and execution problems."""

    def __init__(self, message: str, *, node: int | None = None, op: str | None = None):
        self.node = node
        self.op = op
        if node is not None:
            message = f"node #{node} ({op}): {message}"
        super().__init__(message)


class ShapeError(GraphError):
    """Operand shapes invalid for a primitive, or a binding shape mismatch."""


class DomainError(GraphError):
    """Primitive evaluated outside its documented domain (e.g. log of x <= 0)."""


@dataclass(frozen=True)
class Node:
    idx: int
    op: str
    args: tuple[int, ...]
    shape: Shape
    payload: Any = None
    label: str | None = None
    requires_grad: bool = False

    def name(self) -> str:
        return self.label if self.label is not None else f"#{self.idx}:{self.op}"


@dataclass
class OpCounter:
    """Counts primitive executions during forward evaluation.

    ``matmul_macs`` records, per matmul node, the multiply-add count
    accumulated over all executions (rows * cols * inner per execution).
    """

    invocations: Counter = field(default_factory=Counter)
    node_hits: Counter = field(default_factory=Counter)
    matmul_macs: Counter = field(default_factory=Counter)

    def record(self, node: Node) -> None:
        self.invocations[node.op] += 1
        self.node_hits[node.idx] += 1
        if node.op == "matmul":
            r, k = node.shape[0], node.payload
            c = node.shape[1]
            self.matmul_macs[node.idx] += r * c * k


def _as_shape(shape: Iterable[int]) -> Shape:
    out = tuple(int(s) for s in shape)
    if any(s <= 0 for s in out):
        raise ShapeError(f"extents must be positive, got {out}")
    return out


class Graph:
    """An ordered computation over named leaves; single-writer construction."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaf_ids: dict[str, int] = {}
        self.output: int | None = None

    # -- construction -------------------------------------------------------

    def _append(self, op, args, shape, payload=None, label=None) -> int:
        requires = any(self.nodes[a].requires_grad for a in args)
        node = Node(len(self.nodes), op, tuple(args), shape, payload, label, requires)
        self.nodes.append(node)
        return node.idx

    def _operand(self, idx: int, op: str) -> Node:
        if not 0 <= idx < len(self.nodes):
            raise GraphError(f"unknown operand node {idx}", node=len(self.nodes), op=op)
        return self.nodes[idx]

    def leaf(self, name: str, shape: Iterable[int], differentiable: bool = True) -> int:
        if name in self.leaf_ids:
            raise GraphError(f"leaf '{name}' declared twice")
        shape = _as_shape(shape)
        node = Node(len(self.nodes), "leaf", (), shape, name, name, differentiable)
        self.nodes.append(node)
        self.leaf_ids[name] = node.idx
        return node.idx

    def constant(self, values, label: str | None = None) -> int:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise DomainError("constant contains non-finite values")
        return self._append("const", (), arr.shape, arr.copy(), label)

    def _elementwise(self, op: str, a: int, b: int, label=None) -> int:
        na, nb = self._operand(a, op), self._operand(b, op)
        if na.shape != nb.shape:
            raise ShapeError(
                f"operands {na.shape} vs {nb.shape}", node=len(self.nodes), op=op
            )
        return self._append(op, (a, b), na.shape, label=label)

    def add(self, a: int, b: int, label=None) -> int:
        return self._elementwise("add", a, b, label)

    def sub(self, a: int, b: int, label=None) -> int:
        return self._elementwise("sub", a, b, label)

    def mul(self, a: int, b: int, label=None) -> int:
        return self._elementwise("mul", a, b, label)

    def scale(self, a: int, factor: float, label=None) -> int:
        na = self._operand(a, "scale")
        return self._append("scale", (a,), na.shape, float(factor), label)

    def matmul(self, a: int, b: int, label=None) -> int:
        na, nb = self._operand(a, "matmul"), self._operand(b, "matmul")
        if len(na.shape) != 2 or len(nb.shape) != 2:
            raise ShapeError(
                f"matmul needs 2-D operands, got {na.shape} and {nb.shape}",
                node=len(self.nodes), op="matmul",
            )
        if na.shape[1] != nb.shape[0]:
            raise ShapeError(
                f"inner extents differ: {na.shape} x {nb.shape}",
                node=len(self.nodes), op="matmul",
            )
        # payload = inner extent, used for multiply-add accounting
        return self._append("matmul", (a, b), (na.shape[0], nb.shape[1]), na.shape[1], label)

    def transpose(self, a: int, label=None) -> int:
        na = self._operand(a, "transpose")
        if len(na.shape) != 2:
            raise ShapeError(f"transpose needs a 2-D operand, got {na.shape}",
                             node=len(self.nodes), op="transpose")
        return self._append("transpose", (a,), (na.shape[1], na.shape[0]), label=label)

    def _unary_2d(self, op: str, a: int, out_shape=None, label=None) -> int:
        na = self._operand(a, op)
        if len(na.shape) != 2:
            raise ShapeError(f"{op} needs a 2-D operand, got {na.shape}",
                             node=len(self.nodes), op=op)
        return self._append(op, (a,), out_shape or na.shape, label=label)

    def softmax_cols(self, a: int, label=None) -> int:
        return self._unary_2d("softmax_cols", a, label=label)

    def normalize_rows(self, a: int, label=None) -> int:
        return self._unary_2d("normalize_rows", a, label=label)

    def row_max(self, a: int, label=None) -> int:
        na = self._operand(a, "row_max")
        if len(na.shape) != 2:
            raise ShapeError(f"row_max needs a 2-D operand, got {na.shape}",
                             node=len(self.nodes), op="row_max")
        return self._append("row_max", (a,), (na.shape[0], 1), label=label)

    def mean(self, a: int, label=None) -> int:
        self._operand(a, "mean")
        return self._append("mean", (a,), (1,), label=label)

    def log(self, a: int, label=None) -> int:
        na = self._operand(a, "log")
        return self._append("log", (a,), na.shape, label=label)

    def tanh(self, a: int, label=None) -> int:
        na = self._operand(a, "tanh")
        return self._append("tanh", (a,), na.shape, label=label)

    def hinge(self, a: int, label=None) -> int:
        na = self._operand(a, "hinge")
        return self._append("hinge", (a,), na.shape, label=label)

    def set_output(self, idx: int) -> None:
        node = self._operand(idx, "output")
        if node.shape != (1,):
            raise ShapeError(f"output must have shape (1,), got {node.shape}",
                             node=idx, op=node.op)
        self.output = idx

    def shape(self, idx: int) -> Shape:
        return self.nodes[idx].shape

    def leaf_names(self, differentiable_only: bool = False) -> list[str]:
        names = []
        for name, idx in self.leaf_ids.items():
            if not differentiable_only or self.nodes[idx].requires_grad:
                names.append(name)
        return names

    # -- execution ----------------------------------------------------------

    def _check_bindings(self, bindings: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for name, idx in self.leaf_ids.items():
            if name not in bindings:
                raise GraphError(f"leaf '{name}' is not bound")
            arr = np.asarray(bindings[name], dtype=np.float64)
            declared = self.nodes[idx].shape
            if arr.shape != declared:
                raise ShapeError(
                    f"binding for '{name}' has shape {arr.shape}, declared {declared}",
                    node=idx, op="leaf",
                )
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"binding for '{name}' contains non-finite values",
                                  node=idx, op="leaf")
            out[name] = arr
        return out

    def _forward(self, bindings, counter: OpCounter | None = None) -> list:
        bound = self._check_bindings(bindings)
        values: list[Any] = [None] * len(self.nodes)
        for node in self.nodes:
            op = node.op
            if op == "leaf":
                values[node.idx] = bound[node.payload]
                continue
            if op == "const":
                values[node.idx] = node.payload
                continue
            if counter is not None:
                counter.record(node)
            a = values[node.args[0]]
            if op == "add":
                out = a + values[node.args[1]]
            elif op == "sub":
                out = a - values[node.args[1]]
            elif op == "mul":
                out = a * values[node.args[1]]
            elif op == "scale":
                out = a * node.payload
            elif op == "matmul":
                out = a @ values[node.args[1]]
            elif op == "transpose":
                out = a.T
            elif op == "softmax_cols":
                shifted = a - a.max(axis=0, keepdims=True)
                e = np.exp(shifted)
                out = e / e.sum(axis=0, keepdims=True)
            elif op == "normalize_rows":
                norm = np.sqrt((a * a).sum(axis=1, keepdims=True) + NORM_EPS)
                out = a / norm
            elif op == "row_max":
                out = a.max(axis=1, keepdims=True)
            elif op == "mean":
                out = np.array([a.mean()])
            elif op == "log":
                if np.any(a <= 0.0):
                    raise DomainError("log of non-positive value",
                                      node=node.idx, op="log")
                out = np.log(a)
            elif op == "tanh":
                out = np.tanh(a)
            elif op == "hinge":
                out = np.maximum(a, 0.0)
            else:  # pragma: no cover - construction prevents unknown ops
                raise GraphError(f"unknown op '{op}'", node=node.idx, op=op)
            values[node.idx] = out
        return values

    def evaluate(self, bindings, counter: OpCounter | None = None) -> np.ndarray:
        if self.output is None:
            raise GraphError("graph has no output node set")
        values = self._forward(bindings, counter)
        return values[self.output].copy()

    def evaluate_nodes(self, bindings, nodes: Sequence[int],
                       counter: OpCounter | None = None) -> list[np.ndarray]:
        values = self._forward(bindings, counter)
        return [values[i].copy() for i in nodes]

    def _backward_values(self, values: list) -> dict[str, np.ndarray]:
        adj: list[Any] = [None] * len(self.nodes)
        adj[self.output] = np.ones(1)
        for node in reversed(self.nodes):
            g = adj[node.idx]
            if g is None or not node.requires_grad or node.op in ("leaf", "const"):
                continue
            args = node.args

            def accum(idx, grad):
                if not self.nodes[idx].requires_grad:
                    return
                adj[idx] = grad if adj[idx] is None else adj[idx] + grad

            op = node.op
            if op == "add":
                accum(args[0], g)
                accum(args[1], g)
            elif op == "sub":
                accum(args[0], g)
                accum(args[1], -g)
            elif op == "mul":
                accum(args[0], g * values[args[1]])
                accum(args[1], g * values[args[0]])
            elif op == "scale":
                accum(args[0], g * node.payload)
            elif op == "matmul":
                accum(args[0], g @ values[args[1]].T)
                accum(args[1], values[args[0]].T @ g)
            elif op == "transpose":
                accum(args[0], g.T)
            elif op == "softmax_cols":
                s = values[node.idx]
                gs = g * s
                accum(args[0], gs - s * gs.sum(axis=0, keepdims=True))
            elif op == "normalize_rows":
                x = values[args[0]]
                norm = np.sqrt((x * x).sum(axis=1, keepdims=True) + NORM_EPS)
                dot = (g * x).sum(axis=1, keepdims=True)
                accum(args[0], g / norm - x * (dot / norm**3))
            elif op == "row_max":
                x = values[args[0]]
                # ties route to the lowest-index maximizer
                winners = x.argmax(axis=1)
                grad = np.zeros_like(x)
                grad[np.arange(x.shape[0]), winners] = g[:, 0]
                accum(args[0], grad)
            elif op == "mean":
                x = values[args[0]]
                accum(args[0], np.full_like(x, g[0] / x.size))
            elif op == "log":
                accum(args[0], g / values[args[0]])
            elif op == "tanh":
                y = values[node.idx]
                accum(args[0], g * (1.0 - y * y))
            elif op == "hinge":
                # subgradient 0 at exactly 0
                accum(args[0], g * (values[args[0]] > 0.0))
        grads = {}
        for name, idx in self.leaf_ids.items():
            if self.nodes[idx].requires_grad:
                g = adj[idx]
                grads[name] = np.zeros(self.nodes[idx].shape) if g is None else np.asarray(g)
        return grads

    def backward(self, bindings, counter: OpCounter | None = None) -> dict[str, np.ndarray]:
        if self.output is None:
            raise GraphError("graph has no output node set")
        values = self._forward(bindings, counter)
        return self._backward_values(values)

    def forward_backward(self, bindings, watch: Sequence[int] = (),
                         counter: OpCounter | None = None):
        """One forward pass reused for the output value, watched node values
        and leaf gradients. Returns ``(output, grads, watched_values)``."""
        if self.output is None:
            raise GraphError("graph has no output node set")
        values = self._forward(bindings, counter)
        grads = self._backward_values(values)
        watched = [values[i].copy() for i in watch]
        return values[self.output].copy(), grads, watched


# -- spec-level entry points ------------------------------------------------

def evaluate(graph: Graph, bindings: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate the graph's output tensor for the given leaf bindings."""
    return graph.evaluate(bindings)


def backward(graph: Graph, bindings: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradient of the scalar output with respect to every differentiable leaf."""
    return graph.backward(bindings)


def finite_difference_check(graph: Graph, bindings: Mapping[str, np.ndarray],
                            step: float) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    The error for each leaf entry is ``|analytic - central| / max(1, |central|)``;
    the returned value is the max over all entries of all differentiable leaves.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = graph.backward(bindings)
    work = {name: np.array(v, dtype=np.float64) for name, v in bindings.items()}
    worst = 0.0
    for name in graph.leaf_names(differentiable_only=True):
        arr = work[name]
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = graph.evaluate(work)[0]
            flat[i] = orig - step
            lo = graph.evaluate(work)[0]
            flat[i] = orig
            central = (hi - lo) / (2.0 * step)
            err = abs(ana[i] - central) / max(1.0, abs(central))
            if err > worst:
                worst = err
    return worst


# -- small composite helpers shared by model/loss builders -------------------

def broadcast_columns(g: Graph, column: int, n: int, label=None) -> int:
    """Tile a (r, 1) column vector into (r, n) via an outer product with ones."""
    shape = g.shape(column)
    if len(shape) != 2 or shape[1] != 1:
        raise ShapeError(f"broadcast_columns needs a (r, 1) operand, got {shape}")
    ones = g.constant(np.ones((1, n)))
    return g.matmul(column, ones, label=label)


def sum_all(g: Graph, a: int, label=None) -> int:
    """Sum of all entries, expressed as mean * size."""
    size = 1
    for s in g.shape(a):
        size *= s
    return g.scale(g.mean(a), float(size), label=label)


def clamp_floor(g: Graph, a: int, floor: float, label=None) -> int:
    """max(x, floor) composed from the hinge: hinge(x - floor) + floor."""
    f = g.constant(np.full(g.shape(a), floor))
    return g.add(g.hinge(g.sub(a, f)), f, label=label)
