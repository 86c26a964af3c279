import mpmath
import numpy as np
import pytest

from groundlab import tensor as T
from groundlab.tensor import MASK_SENTINEL, Tensor

from conftest import central_diff, rel_err


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity_left(self, rng):
        a = rng.normal(size=(2, 2))
        out = T.matmul(T.constant(np.eye(2)), T.constant(a))
        np.testing.assert_array_equal(out.data, a)

    def test_identity_right(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(T.constant(a), T.constant(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_random_against_loop_and_fd(self, rng):
        a = T.parameter(rng.normal(size=(3, 4)))
        b = T.parameter(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        out = T.matmul(a, b)
        np.testing.assert_allclose(out.data, triple_loop_matmul(a.data, b.data), rtol=1e-12)
        T.backward(T.weighted_sum(out, w))

        def f():
            return float((triple_loop_matmul(a.data, b.data) * w).sum())

        assert rel_err(a.grad, central_diff(f, a.data)) < 1e-4
        assert rel_err(b.grad, central_diff(f, b.data)) < 1e-4

    def test_batched(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(2, 4, 5))
        out = T.matmul(T.constant(a), T.constant(b))
        for i in range(2):
            np.testing.assert_allclose(out.data[i], triple_loop_matmul(a[i], b[i]), rtol=1e-12)

    def test_shape_mismatch_reports_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))


class TestMaskedSoftmax:
    def test_uniform_rows(self):
        p = T.masked_softmax(T.constant(np.full((3, 4), 0.7)), np.zeros((3, 4)))
        np.testing.assert_allclose(p.data, 0.25, rtol=0, atol=1e-15)

    def test_single_open_entry_gets_everything(self, rng):
        mask = np.full((2, 5), MASK_SENTINEL)
        mask[0, 3] = 0.0
        mask[1, 0] = 0.0
        p = T.masked_softmax(T.constant(rng.normal(size=(2, 5)) * 50), mask)
        expected = np.zeros((2, 5))
        expected[0, 3] = expected[1, 0] = 1.0
        np.testing.assert_array_equal(p.data, expected)

    @staticmethod
    def extended_precision(logits, mask):
        mpmath.mp.dps = 40
        out = np.zeros_like(logits)
        for i, row in enumerate(logits):
            keep = [j for j in range(len(row)) if mask[i, j] == 0.0]
            es = {j: mpmath.exp(mpmath.mpf(float(row[j]))) for j in keep}
            total = sum(es.values())
            for j in keep:
                out[i, j] = float(es[j] / total)
        return out

    def test_random_against_extended_precision(self, rng):
        for _ in range(20):
            logits = rng.normal(size=(4, 4)) * 3
            mask = np.where(rng.random((4, 4)) < 0.4, MASK_SENTINEL, 0.0)
            mask[np.arange(4), rng.integers(0, 4, 4)] = 0.0
            p = T.masked_softmax(T.constant(logits), mask).data
            np.testing.assert_allclose(p, self.extended_precision(logits, mask), rtol=0, atol=1e-12)

    def test_rows_sum_to_one_and_masked_exactly_zero(self, rng):
        for _ in range(50):
            logits = rng.normal(size=(5, 7)) * 10
            mask = np.where(rng.random((5, 7)) < 0.5, MASK_SENTINEL, 0.0)
            mask[:, 2] = 0.0
            p = T.masked_softmax(T.constant(logits), mask).data
            assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
            assert np.all(p[mask != 0.0] == 0.0)

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=(4, 6))
        shift = rng.normal(size=(4, 1)) * 100
        a = T.masked_softmax(T.constant(logits)).data
        b = T.masked_softmax(T.constant(logits + shift)).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_fully_masked_row_rejected(self):
        mask = np.zeros((2, 3))
        mask[1] = MASK_SENTINEL
        with pytest.raises(ValueError, match="fully masked"):
            T.masked_softmax(T.constant(np.zeros((2, 3))), mask)

    def test_mask_broadcasts_over_batch(self, rng):
        mask = np.array([[0.0, MASK_SENTINEL], [0.0, 0.0]])
        p = T.masked_softmax(T.constant(rng.normal(size=(3, 2, 2))), mask).data
        assert np.all(p[:, 0, 1] == 0.0)


class TestElementwise:
    def test_relu(self):
        out = T.relu(T.constant(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_concat_instance_embedding_width(self, rng):
        d = 5
        e = T.concat_last_dim([T.constant(rng.normal(size=(1, d))), T.constant(np.ones((1, 3))),
                               T.constant(np.zeros((1, 3)))])
        assert e.shape == (1, d + 6)

    def test_layer_norm_constant_row(self):
        out = T.layer_norm(T.constant(np.full((2, 4), 3.3)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_errors(self):
        with pytest.raises(T.ShapeError):
            T.add(T.constant(np.ones((2, 3))), T.constant(np.ones((3, 2))))
        with pytest.raises(T.ShapeError):
            T.mul(T.constant(np.ones(3)), T.constant(np.ones(4)))
        with pytest.raises(T.ShapeError):
            T.linear(T.constant(np.ones((2, 3))), T.constant(np.ones((4, 2))))

    def test_l2_norm_gradient_zero_at_origin(self):
        x = T.parameter(np.zeros((2, 3)))
        T.backward(T.sum_all(T.l2_norm_rows(x)))
        np.testing.assert_array_equal(x.grad, 0.0)


def _unary_cases(rng):
    """(name, builder) pairs: builder(inputs) -> output tensor; inputs are shapes."""
    mask = np.array([[0.0, MASK_SENTINEL, 0.0], [0.0, 0.0, 0.0]])
    ids = np.array([[0, 2], [1, 2]])
    return {
        "add": ([(2, 3), (2, 3)], lambda a, b: T.add(a, b)),
        "bias_add": ([(2, 2, 3), (3,)], lambda a, b: T.add(a, b)),
        "sub": ([(2, 3), (2, 3)], lambda a, b: T.sub(a, b)),
        "mul": ([(2, 3), (2, 3)], lambda a, b: T.mul(a, b)),
        "scale": ([(2, 3)], lambda a: T.scale(a, -1.7)),
        "relu": ([(3, 4)], lambda a: T.relu(a)),
        "sigmoid": ([(3, 4)], lambda a: T.sigmoid(a)),
        "matmul": ([(2, 3, 4), (2, 4, 2)], lambda a, b: T.matmul(a, b)),
        "transpose": ([(2, 3, 4)], lambda a: T.transpose(a)),
        "reshape": ([(2, 6)], lambda a: T.reshape(a, (3, 4))),
        "concat": ([(2, 3), (2, 2)], lambda a, b: T.concat_last_dim([a, b])),
        "expand": ([(2, 3)], lambda a: T.expand_batch(a, 3)),
        "take_rows": ([(3, 4)], lambda a: T.take_rows(a, ids)),
        "mean_pool": ([(2, 3, 4)], lambda a: T.mean_pool_rows(a, np.array([[1, 1, 0], [1, 0, 1]]))),
        "l2_norm": ([(3, 4)], lambda a: T.l2_norm_rows(a)),
        "layer_norm": ([(3, 5), (5,), (5,)], lambda a, g, b: T.layer_norm(a, g, b)),
        "linear": ([(2, 3, 4), (4, 2), (2,)], lambda x, w, b: T.linear(x, w, b)),
        "masked_softmax": ([(2, 3)], lambda a: T.masked_softmax(a, mask)),
        "log_softmax": ([(2, 4)], lambda a: T.log_softmax(a)),
        "cross_entropy": ([(3, 4)], lambda a: T.cross_entropy(a, [0, 3, 1])),
        "bce": ([(2, 3)], lambda a: T.bce_with_logits(a, np.array([[1, 0, 1], [0, 0, 1]]), np.full((2, 3), 0.3))),
    }


@pytest.mark.parametrize("op", sorted(_unary_cases(np.random.default_rng(0))))
def test_op_gradients_match_finite_differences(op):
    shapes, build = _unary_cases(np.random.default_rng(0))[op]
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    for trial in range(20):
        inputs = [T.parameter(rng.normal(size=s)) for s in shapes]
        out = build(*inputs)
        w = rng.normal(size=out.shape)

        def f():
            with T.no_grad():
                return float((build(*inputs).data * w).sum())

        T.backward(T.weighted_sum(out, w))
        for x in inputs:
            assert rel_err(x.grad, central_diff(f, x.data)) < 1e-4, (op, trial)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = T.parameter(rng.normal(size=(3, 2)))
        T.backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_half_square_gives_identity(self, rng):
        x = T.parameter(rng.normal(size=(4,)))
        T.backward(T.scale(T.sum_all(T.mul(x, x)), 0.5))
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-15)

    def test_non_scalar_rejected(self):
        with pytest.raises(T.ShapeError, match="scalar"):
            T.backward(T.parameter(np.ones(3)))

    def test_second_backward_doubles_exactly(self, rng):
        x = T.parameter(rng.normal(size=(3, 3)))
        y = T.parameter(rng.normal(size=(3, 3)))
        h = T.relu(T.matmul(x, y))
        loss = T.sum_all(T.mul(h, T.add(h, x)))
        T.backward(loss)
        first_x, first_y = x.grad.copy(), y.grad.copy()
        T.backward(loss)
        np.testing.assert_array_equal(x.grad, 2 * first_x)
        np.testing.assert_array_equal(y.grad, 2 * first_y)

    def test_shared_node_visited_once(self, rng):
        x = T.parameter(rng.normal(size=(2, 2)))
        h = T.scale(x, 3.0)
        loss = T.sum_all(T.add(h, h))
        T.backward(loss)
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 6.0))

    def test_deep_chain_does_not_recurse(self):
        x = T.parameter(np.ones(2))
        h = x
        for _ in range(5000):
            h = T.scale(h, 1.0)
        T.backward(T.sum_all(h))
        np.testing.assert_array_equal(x.grad, 1.0)

    def test_no_grad_builds_no_graph(self, rng):
        x = T.parameter(rng.normal(size=(2,)))
        with T.no_grad():
            y = T.scale(x, 2.0)
        assert not y.requires_grad and y.is_leaf
