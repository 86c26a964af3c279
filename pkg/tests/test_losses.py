import math

import numpy as np
import pytest

import oracles
from conftest import central_diff, rel_err
from groundlab import losses as L
from groundlab import tensor as T


class TestSelection:
    def test_uniform(self):
        assert abs(L.selection_loss(T.constant(np.zeros(4)), 2).item() - math.log(4)) < 1e-15

    def test_confident(self):
        logits = np.zeros(5)
        logits[3] = 1e3
        assert L.selection_loss(T.constant(logits), 3).item() < 1e-12

    def test_matches_oracle(self, rng):
        for _ in range(100):
            k = int(rng.integers(1, 9))
            u = rng.normal(size=k) * 4
            t = int(rng.integers(k))
            assert abs(L.selection_loss(T.constant(u), t).item() - oracles.selection_loss(u.tolist(), t)) <= 1e-10

    def test_batch_is_mean(self, rng):
        u = rng.normal(size=(3, 4))
        t = [0, 3, 1]
        expected = np.mean([oracles.selection_loss(u[i].tolist(), t[i]) for i in range(3)])
        assert abs(L.selection_loss(T.constant(u), t).item() - expected) <= 1e-12

    def test_shift_invariant(self, rng):
        u = rng.normal(size=6)
        a = L.selection_loss(T.constant(u), 2).item()
        b = L.selection_loss(T.constant(u + 37.5), 2).item()
        assert abs(a - b) <= 1e-10

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            L.selection_loss(T.constant(np.zeros(3)), 3)

    def test_gradient(self, rng):
        u = T.parameter(rng.normal(size=(2, 5)))
        T.backward(L.selection_loss(u, [1, 4]))
        fd = central_diff(lambda: L.selection_loss(T.constant(u.data), [1, 4]).item(), u.data)
        assert rel_err(u.grad, fd) < 1e-4


class TestOffset:
    def test_exact_targets_zero(self, rng):
        c = rng.normal(size=(4, 3))
        o = c - c[2]
        assert L.offset_loss(T.constant(o), c, 2).item() == 0.0

    def test_self_offset_is_zero(self):
        c = np.array([[1.0, 0.0, 0.0]])
        assert L.offset_loss(T.constant(np.zeros((1, 3))), c, 0).item() == 0.0

    def test_hand_computed(self):
        c = np.array([[1.0, 0, 0], [0.0, 0, 0]])
        # target is the second instance (index 1)
        assert L.offset_loss(T.constant(np.zeros((2, 3))), c, 1).item() == 0.5

    def test_sum_reduction(self):
        c = np.array([[1.0, 0, 0], [0.0, 0, 0]])
        assert L.offset_loss(T.constant(np.zeros((2, 3))), c, 1, reduction="sum").item() == 1.0

    def test_matches_oracle(self, rng):
        for _ in range(100):
            k = int(rng.integers(1, 9))
            c, o = rng.normal(size=(k, 3)) * 2, rng.normal(size=(k, 3))
            t = int(rng.integers(k))
            got = L.offset_loss(T.constant(o), c, t).item()
            assert abs(got - oracles.offset_loss(o.tolist(), c.tolist(), t)) <= 1e-10

    def test_subgradient_is_unit_vector_over_k(self, rng):
        k = 4
        c = rng.normal(size=(k, 3))
        o = T.parameter(rng.normal(size=(k, 3)))
        T.backward(L.offset_loss(o, c, 1))
        diff = o.data - (c - c[1])
        expected = diff / np.linalg.norm(diff, axis=1, keepdims=True) / k
        np.testing.assert_allclose(o.grad, expected, rtol=1e-12)

    def test_gradient_zero_at_kink(self, rng):
        c = rng.normal(size=(3, 3))
        o = T.parameter(c - c[0])
        T.backward(L.offset_loss(o, c, 0))
        np.testing.assert_array_equal(o.grad, 0.0)


class TestSpan:
    def test_confident(self):
        y = np.array([1, 0, 0, 1])
        assert L.span_loss(T.constant(np.where(y == 1, 1e3, -1e3)), y).item() < 1e-12

    def test_zero_logits_give_ln2(self, rng):
        for _ in range(5):
            y = rng.integers(0, 2, size=6)
            assert abs(L.span_loss(T.constant(np.zeros(6)), y).item() - math.log(2)) < 1e-15

    def test_matches_oracle(self, rng):
        for _ in range(100):
            w = int(rng.integers(1, 9))
            x = rng.normal(size=w) * 5
            y = rng.integers(0, 2, size=w)
            pad = rng.random(w) < 0.3
            pad[int(rng.integers(w))] = False
            got = L.span_loss(T.constant(x), y, pad).item()
            assert abs(got - oracles.span_loss(x.tolist(), y.tolist(), pad.tolist())) <= 1e-10

    def test_pad_positions_ignored(self, rng):
        x = rng.normal(size=(1, 5))
        pad = np.array([[False, False, False, True, True]])
        base = L.span_loss(T.constant(x), np.array([[1, 0, 1, 0, 0]]), pad).item()
        x[0, 3:] = 50.0
        assert L.span_loss(T.constant(x), np.array([[1, 0, 1, 1, 1]]), pad).item() == base

    def test_all_pad_rejected(self):
        with pytest.raises(ValueError, match="non-pad"):
            L.span_loss(T.constant(np.zeros(2)), np.zeros(2), np.array([True, True]))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            L.span_loss(T.constant(np.zeros(2)), np.array([0.5, 1.0]))

    def test_gradient(self, rng):
        s = T.parameter(rng.normal(size=(2, 4)))
        y = rng.integers(0, 2, size=(2, 4))
        pad = np.array([[False] * 4, [False, False, True, True]])
        T.backward(L.span_loss(s, y, pad))
        fd = central_diff(lambda: L.span_loss(T.constant(s.data), y, pad).item(), s.data)
        assert rel_err(s.grad, fd) < 1e-4


class TestCombine:
    @pytest.fixture
    def report(self):
        return L.LossReport(selection=T.constant(np.array(1.5)),
                            offset_blocks=[T.constant(np.array(0.25)), T.constant(np.array(0.5))],
                            span=T.constant(np.array(0.125)))

    def test_selection_only(self, report):
        assert L.combine(report, L.LossWeights(1, 0, 0)).item() == 1.5

    def test_with_offset(self, report):
        assert L.combine(report, L.LossWeights(1, 1, 0)).item() == 2.25

    def test_weighted(self, report):
        assert L.combine(report, L.LossWeights(1, 10, 0.1)).item() == pytest.approx(1.5 + 7.5 + 0.0125, abs=1e-15)

    def test_all_zero(self, report):
        assert L.combine(report, L.LossWeights(0, 0, 0)).item() == 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            L.LossWeights(1, -1, 1)

    def test_report_dict(self, report):
        L.combine(report, L.LossWeights())
        d = report.as_dict()
        assert d["offset"] == 0.75 and d["offset_blocks"] == [0.25, 0.5] and d["total"] == 2.375


def test_cls_loss_is_class_cross_entropy(rng):
    logits = rng.normal(size=(2, 12))
    got = L.cls_loss(T.constant(logits), [3, 7]).item()
    expected = (oracles.selection_loss(logits[0].tolist(), 3) + oracles.selection_loss(logits[1].tolist(), 7)) / 2
    assert abs(got - expected) <= 1e-12
