"""Engine tests: primitive values against hand oracles, gradients against
central finite differences, and the deterministic subgradient conventions."""

import numpy as np
import pytest

from clusterlab.graph import (DomainError, Graph, OpCounter, ShapeError,
                              backward, broadcast_columns, clamp_floor,
                              evaluate, finite_difference_check, sum_all)


def matmul_oracle(a, b):
    """Naive triple loop, independent of numpy's matmul."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def scalar_graph(op_builder, leaf_shape, name="x"):
    """A graph reducing op_builder(leaf) to its mean, for gradient checks."""
    g = Graph()
    leaf = g.leaf(name, leaf_shape)
    g.set_output(g.mean(op_builder(g, leaf)))
    return g


class TestForward:
    def test_softmax_of_equal_column_is_uniform(self):
        g = Graph()
        x = g.leaf("x", (2, 1))
        s = g.softmax_cols(x)
        out = g.evaluate_nodes({"x": np.zeros((2, 1))}, [s])[0]
        assert np.allclose(out.ravel(), [0.5, 0.5])

    def test_hinge_definition(self):
        g = Graph()
        x = g.leaf("x", (3, 1))
        h = g.hinge(x)
        out = g.evaluate_nodes({"x": np.array([[-0.3], [0.0], [0.7]])}, [h])[0]
        assert np.array_equal(out.ravel(), [0.0, 0.0, 0.7])

    def test_matmul_hand_case(self):
        g = Graph()
        a = g.leaf("a", (2, 2))
        b = g.leaf("b", (2, 1))
        m = g.matmul(a, b)
        av = np.array([[1.0, 2.0], [3.0, 4.0]])
        bv = np.array([[1.0], [1.0]])
        out = g.evaluate_nodes({"a": av, "b": bv}, [m])[0]
        assert np.array_equal(out, [[3.0], [7.0]])
        assert np.array_equal(out, matmul_oracle(av, bv))

    @pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4, 2)), ((5, 2), (2, 5))])
    def test_matmul_matches_triple_loop_oracle(self, shape_a, shape_b):
        rng = np.random.default_rng(11)
        av, bv = rng.standard_normal(shape_a), rng.standard_normal(shape_b)
        g = Graph()
        a, b = g.leaf("a", shape_a), g.leaf("b", shape_b)
        m = g.matmul(a, b)
        out = g.evaluate_nodes({"a": av, "b": bv}, [m])[0]
        assert np.allclose(out, matmul_oracle(av, bv), atol=1e-12)

    def test_evaluate_is_bitwise_deterministic(self):
        g = scalar_graph(lambda g, x: g.softmax_cols(g.tanh(x)), (4, 3))
        rng = np.random.default_rng(5)
        bindings = {"x": rng.standard_normal((4, 3))}
        first = evaluate(g, bindings)
        second = evaluate(g, bindings)
        assert np.array_equal(first, second)

    def test_softmax_columns_sum_to_one_and_positive(self):
        g = Graph()
        x = g.leaf("x", (6, 9))
        s = g.softmax_cols(x)
        rng = np.random.default_rng(2)
        out = g.evaluate_nodes({"x": 3 * rng.standard_normal((6, 9))}, [s])[0]
        assert np.all(out > 0)
        assert np.allclose(out.sum(axis=0), 1.0, atol=1e-9)

    def test_normalize_rows_unit_norm(self):
        g = Graph()
        x = g.leaf("x", (4, 7))
        node = g.normalize_rows(x)
        rng = np.random.default_rng(3)
        out = g.evaluate_nodes({"x": rng.standard_normal((4, 7))}, [node])[0]
        assert np.allclose((out**2).sum(axis=1), 1.0, atol=1e-9)

    def test_row_max_values(self):
        g = Graph()
        x = g.leaf("x", (2, 3))
        node = g.row_max(x)
        out = g.evaluate_nodes({"x": np.array([[1.0, 5.0, 2.0], [0.0, -1.0, -2.0]])},
                               [node])[0]
        assert np.array_equal(out, [[5.0], [0.0]])

    def test_helpers(self):
        g = Graph()
        x = g.leaf("x", (2, 1))
        wide = broadcast_columns(g, x, 3)
        total = sum_all(g, wide)
        clamped = clamp_floor(g, x, 1.5)
        vals = g.evaluate_nodes({"x": np.array([[1.0], [2.0]])},
                                [wide, total, clamped])
        assert np.array_equal(vals[0], [[1, 1, 1], [2, 2, 2]])
        assert np.allclose(vals[1], [9.0])
        assert np.array_equal(vals[2], [[1.5], [2.0]])


class TestErrors:
    def test_shape_mismatch_names_node(self):
        g = Graph()
        a = g.leaf("a", (2, 3))
        b = g.leaf("b", (3, 3))
        with pytest.raises(ShapeError, match="add"):
            g.add(a, b)

    def test_matmul_inner_mismatch(self):
        g = Graph()
        a = g.leaf("a", (2, 3))
        b = g.leaf("b", (2, 3))
        with pytest.raises(ShapeError, match="inner extents"):
            g.matmul(a, b)

    def test_log_domain_error_names_node(self):
        g = Graph()
        x = g.leaf("x", (2, 1))
        g.set_output(g.mean(g.log(x)))
        with pytest.raises(DomainError, match="log"):
            evaluate(g, {"x": np.array([[1.0], [-1.0]])})

    def test_missing_binding(self):
        g = scalar_graph(lambda g, x: x, (2, 2))
        with pytest.raises(Exception, match="not bound"):
            evaluate(g, {})

    def test_binding_shape_mismatch(self):
        g = scalar_graph(lambda g, x: x, (2, 2))
        with pytest.raises(ShapeError):
            evaluate(g, {"x": np.zeros((3, 2))})

    def test_non_finite_binding_rejected(self):
        g = scalar_graph(lambda g, x: x, (2, 2))
        with pytest.raises(DomainError, match="non-finite"):
            evaluate(g, {"x": np.array([[1.0, np.nan], [0.0, 0.0]])})

    def test_output_must_be_scalar(self):
        g = Graph()
        x = g.leaf("x", (2, 2))
        with pytest.raises(ShapeError, match="output"):
            g.set_output(x)

    def test_no_broadcasting_between_tensors(self):
        g = Graph()
        a = g.leaf("a", (2, 3))
        b = g.leaf("b", (2, 1))
        with pytest.raises(ShapeError):
            g.mul(a, b)


class TestBackward:
    def test_quadratic_gradient(self):
        g = Graph()
        x = g.leaf("x", (2, 1))
        g.set_output(sum_all(g, g.mul(x, x)))
        grads = backward(g, {"x": np.array([[1.0], [2.0]])})
        assert np.allclose(grads["x"], [[2.0], [4.0]])

    def test_hinge_subgradient_zero_at_kink(self):
        g = Graph()
        x = g.leaf("x", (3, 1))
        g.set_output(g.mean(g.hinge(x)))
        grads = backward(g, {"x": np.array([[-1.0], [0.0], [1.0]])})
        assert np.allclose(grads["x"].ravel(), [0.0, 0.0, 1.0 / 3.0])

    def test_row_max_ties_route_to_lowest_index(self):
        g = Graph()
        x = g.leaf("x", (1, 3))
        g.set_output(g.mean(g.row_max(x)))
        grads = backward(g, {"x": np.array([[2.0, 2.0, 1.0]])})
        assert np.array_equal(grads["x"], [[1.0, 0.0, 0.0]])

    def test_gradient_of_unreached_leaf_is_zero(self):
        g = Graph()
        x = g.leaf("x", (2, 1))
        unused = g.leaf("unused", (3, 1))
        g.set_output(g.mean(x))
        grads = backward(g, {"x": np.ones((2, 1)), "unused": np.ones((3, 1))})
        assert np.array_equal(grads["unused"], np.zeros((3, 1)))

    def test_mean_softmax_gradient_matches_finite_differences(self):
        g = scalar_graph(lambda g, x: g.softmax_cols(x), (4, 5))
        rng = np.random.default_rng(9)
        err = finite_difference_check(g, {"x": rng.standard_normal((4, 5))}, 1e-5)
        assert err < 1e-4


PRIMITIVE_CASES = [
    ("add", lambda g, x: g.add(x, g.constant(np.full((3, 4), 0.3)))),
    ("sub", lambda g, x: g.sub(g.constant(np.full((3, 4), 0.3)), x)),
    ("mul", lambda g, x: g.mul(x, g.constant(np.linspace(0.5, 2, 12).reshape(3, 4)))),
    ("scale", lambda g, x: g.scale(x, -1.7)),
    ("matmul_left", lambda g, x: g.matmul(x, g.constant(np.linspace(-1, 1, 8).reshape(4, 2)))),
    ("matmul_right", lambda g, x: g.matmul(g.constant(np.linspace(-1, 1, 6).reshape(2, 3)), x)),
    ("transpose", lambda g, x: g.transpose(x)),
    ("softmax_cols", lambda g, x: g.softmax_cols(x)),
    ("normalize_rows", lambda g, x: g.normalize_rows(x)),
    ("row_max", lambda g, x: g.row_max(x)),
    ("log", lambda g, x: g.log(clamp_floor(g, x, 2.0))),
    ("tanh", lambda g, x: g.tanh(x)),
    ("hinge", lambda g, x: g.hinge(x)),
    ("mean", lambda g, x: g.mean(x)),
]


@pytest.mark.parametrize("name,builder", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_per_primitive_finite_difference(name, builder):
    """Each primitive's backward agrees with central differences to 1e-5."""
    rng = np.random.default_rng(hash(name) % 2**32)
    if name == "log":
        # clamp_floor(x, 2.0) keeps log inputs away from both the domain
        # boundary and the clamp kink
        values = 3.0 + rng.random((3, 4))
    elif name in ("row_max", "hinge"):
        # keep away from the non-smooth loci: distinct row values, no zeros
        values = rng.permutation(np.linspace(-2, 2, 12)).reshape(3, 4)
    else:
        values = rng.standard_normal((3, 4))
    g = scalar_graph(builder, (3, 4))
    err = finite_difference_check(g, {"x": values}, 1e-5)
    assert err < 1e-5, f"{name}: fd error {err}"


class TestFiniteDifferenceCheck:
    def test_quadratic_is_nearly_exact(self):
        g = Graph()
        x = g.leaf("x", (3, 1))
        g.set_output(sum_all(g, g.mul(x, x)))
        err = finite_difference_check(g, {"x": np.array([[1.0], [-2.0], [0.5]])}, 1e-5)
        assert err < 1e-6

    def test_row_max_graph_away_from_ties(self):
        g = Graph()
        x = g.leaf("x", (3, 4))
        g.set_output(g.mean(g.row_max(x)))
        values = np.arange(12, dtype=float).reshape(3, 4)  # strict argmax per row
        assert finite_difference_check(g, {"x": values}, 1e-5) < 1e-4

    def test_step_must_be_positive(self):
        g = scalar_graph(lambda g, x: x, (1, 1))
        with pytest.raises(ValueError):
            finite_difference_check(g, {"x": np.ones((1, 1))}, 0.0)


def test_op_counter_counts_forward_executions():
    g = Graph()
    a = g.leaf("a", (2, 3))
    b = g.leaf("b", (3, 5))
    m = g.matmul(a, b)
    g.set_output(g.mean(m))
    counter = OpCounter()
    g.evaluate({"a": np.ones((2, 3)), "b": np.ones((3, 5))}, counter)
    assert counter.invocations["matmul"] == 1
    assert counter.matmul_macs[m] == 2 * 3 * 5
