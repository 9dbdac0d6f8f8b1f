import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchmesh import tensor as T
from sketchmesh.tensor.gradcheck import check_gradients


def t(data, grad=False):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestElementwise:
    def test_mul_values(self):
        out = T.elementwise("mul", t([1.0, 2.0, 3.0]), t([4.0, 5.0, 6.0]))
        assert np.allclose(out.data, [4.0, 10.0, 18.0])

    def test_sigmoid_at_zero(self):
        assert T.elementwise("sigmoid", t([0.0])).data[0] == pytest.approx(0.5)

    def test_chain_rule_example(self):
        a = t([1.0, 2.0], grad=True)
        b = t([3.0, 4.0])
        T.backward(T.tsum(a * b))
        assert np.allclose(a.grad.data, [3.0, 4.0])

    def test_scalar_broadcast(self):
        a = t([1.0, 2.0, 3.0], grad=True)
        out = a * 2.0 + 1.0
        assert np.allclose(out.data, [3.0, 5.0, 7.0])
        T.backward(T.tsum(out))
        assert np.allclose(a.grad.data, [2.0, 2.0, 2.0])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            T.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_log_domain_error(self):
        with pytest.raises(ValueError, match="log"):
            T.tlog(t([1.0, -1.0]))

    def test_div_by_zero_error(self):
        with pytest.raises(ZeroDivisionError):
            T.div(t([1.0]), t([0.0]))

    def test_unknown_op_kind(self):
        with pytest.raises(ValueError, match="unknown elementwise"):
            T.elementwise("cosh", t([1.0]))

    def test_unary_binary_arity(self):
        with pytest.raises(ValueError):
            T.elementwise("add", t([1.0]))
        with pytest.raises(ValueError):
            T.elementwise("exp", t([1.0]), t([1.0]))

    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=6),
           st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    @settings(max_examples=30, deadline=None)
    def test_add_mul_forward_match_numpy(self, xs, ys):
        n = min(len(xs), len(ys))
        a, b = np.array(xs[:n]), np.array(ys[:n])
        assert np.allclose(T.add(t(a), t(b)).data, a + b)
        assert np.allclose(T.mul(t(a), t(b)).data, a * b)


class TestMatmul:
    def test_identity(self):
        m = t([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(t(np.eye(2)), m)
        assert np.allclose(out.data, m.data)

    def test_row_times_column(self):
        out = T.matmul(t([[1.0, 2.0]]), t([[3.0], [4.0]]))
        assert out.data.shape == (1, 1) and out.data[0, 0] == pytest.approx(11.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = t(rng.uniform(-2, 2, (3, 4)), grad=True)
        b = t(rng.uniform(-2, 2, (4, 2)), grad=True)
        err = check_gradients(lambda: T.tsum(T.square(T.matmul(a, b))), [a, b])
        assert err < 1e-6


class TestConv:
    def test_ones_kernel_sums(self):
        x = t(np.ones((1, 3, 3)))
        k = t(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k)
        assert out.data.shape == (1, 1, 1) and out.data[0, 0, 0] == pytest.approx(9.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = t(rng.normal(size=(2, 5, 5)))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        out = T.conv2d(x, t(k), pad=1)
        assert np.allclose(out.data, x.data)

    def test_non_integral_output_extent(self):
        with pytest.raises(ValueError, match="non-integral"):
            T.conv2d(t(np.ones((1, 6, 6))), t(np.ones((1, 1, 3, 3))), stride=2, pad=1)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            T.conv2d(t(np.ones((1, 6, 6))), t(np.ones((1, 1, 4, 4))))

    def test_input_smaller_than_kernel(self):
        with pytest.raises(ValueError, match="smaller"):
            T.conv2d(t(np.ones((1, 2, 2))), t(np.ones((1, 1, 3, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(2)
        x = t(rng.uniform(-2, 2, (2, 8, 8)), grad=True)
        k = t(rng.normal(0, 0.4, (3, 2, 3, 3)), grad=True)
        err = check_gradients(
            lambda: T.tsum(T.square(T.conv2d(x, k, stride=1, pad=1))), [x, k])
        assert err < 1e-5

    def test_strided_matches_dense_subsampling(self):
        rng = np.random.default_rng(3)
        x = t(rng.normal(size=(1, 7, 7)))
        k = t(rng.normal(size=(2, 1, 3, 3)))
        dense = T.conv2d(x, k).data
        strided = T.conv2d(x, k, stride=2).data
        assert np.allclose(strided, dense[:, ::2, ::2])


class TestPooling:
    def test_block_mean(self):
        out = T.avg_pool2x(t([[1.0, 2.0], [3.0, 4.0]]))
        assert out.data.shape == (1, 1) and out.data[0, 0] == pytest.approx(2.5)

    def test_constant_preserved(self):
        out = T.avg_pool2x(t(np.full((4, 4), 0.7)))
        assert np.allclose(out.data, 0.7)

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="even"):
            T.avg_pool2x(t(np.ones((3, 4))))

    def test_backward_spreads_quarter(self):
        x = t(np.arange(16.0).reshape(4, 4), grad=True)
        T.backward(T.tsum(T.avg_pool2x(x) * t([[1.0, 2.0], [3.0, 4.0]])))
        expect = np.repeat(np.repeat([[1.0, 2.0], [3.0, 4.0]], 2, 0), 2, 1) / 4.0
        assert np.allclose(x.grad.data, expect)


class TestBackwardSemantics:
    def test_square_sum_example(self):
        x = t([1.0, 2.0, 3.0], grad=True)
        T.backward(T.tsum(T.square(x)))
        assert np.allclose(x.grad.data, [2.0, 4.0, 6.0])

    def test_double_backward_cubic(self):
        # d2/dx2 of x^3 at x=2 is 6x = 12
        x = t([2.0], grad=True)
        (g,) = T.grad(T.tsum(x * x * x), [x], create_graph=True)
        T.backward(T.tsum(g))
        assert np.allclose(x.grad.data, [12.0])

    def test_zero_input_graph(self):
        x = t([0.0, 0.0], grad=True)
        T.backward(T.tsum(x * x))
        assert np.allclose(x.grad.data, 0.0)

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0], grad=True)
        with pytest.raises(ValueError, match="scalar"):
            T.backward(x * 2.0)

    def test_second_backward_without_retain_raises(self):
        x = t([1.0], grad=True)
        y = T.tsum(T.square(x))
        T.backward(y)
        with pytest.raises(T.GraphError):
            T.backward(y)

    def test_retain_graph_allows_second_pass(self):
        x = t([1.0], grad=True)
        y = T.tsum(T.square(x))
        T.backward(y, retain_graph=True)
        T.backward(y)
        assert np.allclose(x.grad.data, [4.0])  # accumulated twice

    def test_accumulation_additive(self):
        x = t([1.0, 2.0], grad=True)
        T.backward(T.tsum(T.square(x)))
        T.backward(T.tsum(x * 3.0))
        two_pass = x.grad.data.copy()
        x.grad = None
        T.backward(T.tsum(T.square(x)) + T.tsum(x * 3.0))
        assert np.allclose(two_pass, x.grad.data)

    def test_no_grad_suppresses_recording(self):
        x = t([1.0], grad=True)
        with T.no_grad():
            y = T.square(x)
        assert y.node is None and not y.requires_grad

    def test_non_requires_grad_never_accumulates(self):
        x = t([1.0, 2.0])
        y = t([3.0, 4.0], grad=True)
        T.backward(T.tsum(x * y))
        assert x.grad is None

    def test_deterministic_gradients(self):
        rng = np.random.default_rng(5)
        a0 = rng.normal(size=(4, 4))

        def run():
            a = t(a0, grad=True)
            T.backward(T.tsum(T.sigmoid(T.matmul(a, a)) * 2.0))
            return a.grad.data

        g1, g2 = run(), run()
        assert np.array_equal(g1, g2)

    def test_create_graph_refused_on_opaque_vjp(self):
        x = t([1.0, 2.0], grad=True)
        out = T.record(T.Tensor(x.data * 2.0), "opaque", (x,),
                       lambda g: (T.Tensor(g.data * 2.0),), differentiable=False)
        with pytest.raises(T.GraphError, match="double backward"):
            T.grad(T.tsum(out), [x], create_graph=True)

    def test_each_node_visited_once(self):
        calls = []
        x = t([1.0], grad=True)
        y = T.square(x)
        orig = y.node.vjp
        y.node.vjp = lambda g: (calls.append(1), orig(g))[1]
        z = y + y  # diamond: y used twice
        T.backward(T.tsum(z))
        assert len(calls) == 1
        assert np.allclose(x.grad.data, [4.0])

    def test_graph_epoch_counter(self):
        e0 = T.ACTIVE_GRAPH.epoch
        T.ACTIVE_GRAPH.reset()
        assert T.ACTIVE_GRAPH.epoch == e0 + 1

    def test_graph_records_are_topological(self):
        T.ACTIVE_GRAPH.reset()
        x = t([1.0, 2.0], grad=True)
        y = T.sigmoid(x * 3.0)
        z = T.tsum(y * y + x)
        assert z.node is T.ACTIVE_GRAPH.nodes[-1]
        position = {id(n): i for i, n in enumerate(T.ACTIVE_GRAPH.nodes)}
        for node in T.ACTIVE_GRAPH.nodes:
            for inp in node.inputs:
                if inp.node is not None:
                    assert position[id(inp.node)] < position[id(node)]


class TestShapesAndIndexing:
    def test_getitem_and_backward(self):
        x = t(np.arange(12.0).reshape(3, 4), grad=True)
        col = T.getitem(x, (slice(None), 1))
        assert np.allclose(col.data, [1.0, 5.0, 9.0])
        T.backward(T.tsum(col))
        expect = np.zeros((3, 4))
        expect[:, 1] = 1.0
        assert np.allclose(x.grad.data, expect)

    def test_concat_backward(self):
        a = t([[1.0], [2.0]], grad=True)
        b = t([[3.0], [4.0]], grad=True)
        out = T.concat([a, b], axis=1)
        T.backward(T.tsum(out * t([[1.0, 10.0], [100.0, 1000.0]])))
        assert np.allclose(a.grad.data, [[1.0], [100.0]])
        assert np.allclose(b.grad.data, [[10.0], [1000.0]])

    def test_take_scatter_adjoint_pair(self):
        rng = np.random.default_rng(7)
        x = t(rng.normal(size=6), grad=True)
        idx = np.array([0, 0, 3, 5])
        taken = T.take_flat(x, idx, (4,))
        T.backward(T.tsum(taken))
        expect = np.array([2.0, 0, 0, 1.0, 0, 1.0])
        assert np.allclose(x.grad.data, expect)

    def test_broadcast_to_and_sum_are_adjoint(self):
        x = t([[1.0], [2.0]], grad=True)
        out = T.broadcast_to(x, (2, 3))
        T.backward(T.tsum(out))
        assert np.allclose(x.grad.data, [[3.0], [3.0]])


class TestAdam:
    def test_first_step_magnitude(self):
        x = t([1.0], grad=True)
        adam = T.Adam([x], lr=0.1)
        T.backward(T.tsum(T.square(x)))
        adam.step()
        assert x.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_leaves_parameter(self):
        x = t([1.5], grad=True)
        x.grad = T.Tensor([0.0])
        adam = T.Adam([x], lr=0.1)
        adam.step()
        assert x.data[0] == pytest.approx(1.5)

    def test_missing_grad_raises(self):
        x = t([1.0], grad=True)
        adam = T.Adam([x], lr=0.1)
        with pytest.raises(ValueError, match="no grad"):
            adam.step()

    def test_converges_on_convex_quadratic(self):
        rng = np.random.default_rng(9)
        x = t(rng.uniform(-1, 1, 5), grad=True)
        target = rng.uniform(-1, 1, 5)
        adam = T.Adam([x], lr=0.05)
        for _ in range(500):
            adam.zero_grad()
            T.backward(T.tsum(T.square(x - t(target))))
            adam.step()
            T.ACTIVE_GRAPH.reset()
        assert np.max(np.abs(x.data - target)) < 1e-3


class TestDtype:
    def test_default_dtype_switch(self):
        with T.using_dtype("float32"):
            x = T.Tensor([1.0])
            assert x.data.dtype == np.float32
        assert T.Tensor([1.0]).data.dtype == np.float64

    def test_rejects_unsupported(self):
        with pytest.raises(ValueError):
            T.set_default_dtype(np.int32)
