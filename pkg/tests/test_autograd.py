import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agconv import autograd as ag
from agconv.autograd import Parameter, Tape, Tensor
from agconv.exceptions import ContractError, DimensionError, NumericError


def grads_of(loss_fn, *params):
    with Tape() as tape:
        loss = loss_fn()
    out = ag.backward(loss, tape, accumulate=False)
    return [out.get(p) for p in params]


class TestTensor:
    def test_values_length_matches_shape(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert t.values.size == 6
        assert t.values.tolist() == [0, 1, 2, 3, 4, 5]

    def test_zero_extent_is_empty(self):
        t = Tensor(np.zeros((0, 3)))
        assert t.shape == (0, 3)
        assert t.values.size == 0

    def test_parameter_buffers_match_values(self):
        p = Parameter(np.ones((3, 2)))
        assert p.grad.shape == p.shape
        assert p.momentum.shape == p.shape
        assert p.requires_grad

    def test_no_tape_records_nothing(self):
        p = Parameter([1.0, 2.0])
        out = p * 2.0
        assert not out.requires_grad


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ag.matmul(np.eye(2), a).data, a)

    def test_projector_selects_row(self):
        out = ag.matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
        assert out.data.tolist() == [[5, 6], [0, 0]]

    def test_hand_product(self):
        out = ag.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[2.0], [1.0]]))
        assert out.data.tolist() == [[4], [10]]

    def test_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            ag.matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        a = Parameter(rng.standard_normal((4, 3)))
        b = Parameter(rng.standard_normal((3, 2)))
        w = rng.standard_normal((4, 2))
        ga, gb = grads_of(lambda: (ag.matmul(a, b) * w).sum(), a, b)
        np.testing.assert_allclose(ga, w @ b.data.T)
        np.testing.assert_allclose(gb, a.data.T @ w)


class TestLeakyRelu:
    @pytest.mark.parametrize("x, expected", [(3.0, 3.0), (0.0, 0.0), (-5.0, -1.0)])
    def test_values(self, x, expected):
        assert ag.leaky_relu(Tensor([x]), 0.2).data[0] == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("slope", [-0.1, 1.0, 2.0])
    def test_bad_slope(self, slope):
        with pytest.raises(ContractError):
            ag.leaky_relu(Tensor([1.0]), slope)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ag.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_dominance(self):
        np.testing.assert_allclose(ag.softmax_lastdim(Tensor([1000.0, 0.0, 0.0])).data, [1, 0, 0], atol=1e-12)

    def test_hand_values(self):
        out = ag.softmax_lastdim(Tensor([math.log(2), math.log(1), math.log(1)])).data
        np.testing.assert_allclose(out, [0.5, 0.25, 0.25], atol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
    def test_rows_sum_to_one(self, x):
        out = ag.softmax_lastdim(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        p = Parameter(np.random.default_rng(0).standard_normal((2, 4)))
        w = np.random.default_rng(1).standard_normal((2, 4))
        assert ag.grad_check(lambda: (ag.softmax(p, axis=1) * w).sum(), [p]) < 1e-8


class TestReduceMax:
    def test_columns(self):
        values, arg = ag.reduce_max_rows(Tensor([[1.0, 5.0], [3.0, 2.0]]))
        assert values.data.tolist() == [3, 5]
        assert arg.tolist() == [1, 0]

    def test_single_row(self):
        values, arg = ag.reduce_max_rows(Tensor([[4.0, -1.0, 2.0]]))
        assert values.data.tolist() == [4, -1, 2]
        assert arg.tolist() == [0, 0, 0]

    def test_duplicated_rows(self):
        row = np.array([[4.0, -1.0, 2.0]])
        values, _ = ag.reduce_max_rows(Tensor(np.vstack([row, row, row])))
        assert np.array_equal(values.data, row[0])

    def test_tie_gradient_goes_to_lowest_index(self):
        p = Parameter([[2.0, 1.0], [2.0, 3.0], [0.0, 3.0]])
        (g,) = grads_of(lambda: ag.reduce_max_rows(p)[0].sum(), p)
        assert g.tolist() == [[1, 0], [0, 1], [0, 0]]

    def test_empty_axis(self):
        with pytest.raises(ContractError):
            ag.reduce_max(Tensor(np.zeros((0, 3))), axis=0)

    @settings(max_examples=30)
    @given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)), st.randoms(use_true_random=False))
    def test_row_permutation_invariance(self, x, rnd):
        perm = list(range(6))
        rnd.shuffle(perm)
        a, _ = ag.reduce_max_rows(Tensor(x))
        b, _ = ag.reduce_max_rows(Tensor(x[perm]))
        assert np.array_equal(a.data, b.data)


class TestConcat:
    def test_vectors(self):
        assert ag.concat_lastdim(Tensor([1.0, 2.0]), Tensor([3.0])).data.tolist() == [1, 2, 3]

    def test_empty_left(self):
        assert ag.concat_lastdim(Tensor(np.zeros(0)), Tensor([7.0])).data.tolist() == [7]

    def test_rowwise(self):
        out = ag.concat_lastdim(Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[1, 3], [2, 4]]

    def test_leading_mismatch(self):
        with pytest.raises(DimensionError):
            ag.concat_lastdim(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))

    def test_gradient_splits(self):
        a, b = Parameter([[1.0, 2.0]]), Parameter([[3.0]])
        ga, gb = grads_of(lambda: (ag.concat([a, b], axis=-1) * np.array([[1.0, 2.0, 3.0]])).sum(), a, b)
        assert ga.tolist() == [[1, 2]] and gb.tolist() == [[3]]


class TestBackward:
    def test_linear_map(self):
        x = np.array([1.0, -2.0, 0.5])
        w = Parameter(np.zeros(3))
        (g,) = grads_of(lambda: (w * x).sum(), w)
        assert np.array_equal(g, x)

    def test_constant_loss_has_no_grads(self):
        w = Parameter([1.0])
        with Tape() as tape:
            loss = Tensor(4.0)
        assert ag.backward(loss, tape) == {}
        assert w.grad.tolist() == [0.0]

    def test_product_rule(self):
        w1, w2 = Parameter([2.0]), Parameter([3.0])
        with Tape() as tape:
            loss = (w1 * w2).sum()
        ag.backward(loss, tape)
        assert w1.grad.tolist() == [3.0]
        assert w2.grad.tolist() == [2.0]

    def test_reuse_accumulates(self):
        # x used three times: d/dx (x*x + 4x) = 2x + 4
        x = Parameter([1.5])
        (g,) = grads_of(lambda: (x * x + x * 4.0).sum(), x)
        assert g.tolist() == [7.0]

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            ag.backward(Tensor([1.0, 2.0]))

    def test_gather_repeated_indices_accumulate(self):
        x = Parameter([[1.0], [2.0], [3.0]])
        (g,) = grads_of(lambda: ag.gather_rows(x, np.array([[0, 0], [2, 0]])).sum(), x)
        assert g.ravel().tolist() == [3, 0, 1]

    def test_tape_visits_each_record_once(self):
        calls = []
        x = Parameter([2.0])
        with Tape() as tape:
            loss = ((x * 3.0) + 1.0).sum()
        for i, rec in enumerate(tape.records):
            fn = rec.backward_fn
            rec.backward_fn = lambda g, fn=fn, i=i: (calls.append(i), fn(g))[1]
        ag.backward(loss, tape)
        assert calls == list(reversed(range(len(tape.records))))


class TestGradCheck:
    def test_square(self):
        w = Parameter([3.0])
        with Tape() as tape:
            loss = (w * w).sum()
        analytic = ag.backward(loss, tape, accumulate=False)[w][0]
        numeric = ((3.0 + 1e-6) ** 2 - (3.0 - 1e-6) ** 2) / 2e-6
        assert analytic == 6.0
        assert abs(numeric - 6.0) < 1e-9
        assert ag.grad_check(lambda: (w * w).sum(), [w]) < 1e-9

    def test_constant(self):
        w = Parameter([1.0, 2.0])
        assert ag.grad_check(lambda: Tensor(5.0), [w]) == 0.0

    def test_detects_wrong_gradient(self):
        w = Parameter([1.0, 2.0])

        def broken():
            return ag._make(np.asarray((w.data**2).sum()), (w,), lambda g: (g * w.data,))

        assert ag.grad_check(broken, [w]) > 0.1

    def test_non_finite(self):
        w = Parameter([0.0])
        with pytest.raises(NumericError):
            ag.grad_check(lambda: ag._make(np.asarray(np.inf), (w,), lambda g: (g,)), [w])


class TestLossAndNorm:
    def test_cross_entropy_examples(self):
        assert ag.cross_entropy(Tensor([1000.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-12)
        assert ag.cross_entropy(Tensor(np.zeros(5)), 2).item() == pytest.approx(math.log(5), abs=1e-14)
        loss = ag.cross_entropy(Tensor([math.log(1), math.log(3)]), 1).item()
        assert loss == pytest.approx(-math.log(0.75), abs=1e-14)
        assert loss == pytest.approx(0.2877, abs=5e-5)

    def test_cross_entropy_gradient(self):
        p = Parameter(np.random.default_rng(0).standard_normal((4, 3)))
        assert ag.grad_check(lambda: ag.cross_entropy(p, [0, 2, 1, 1]), [p]) < 1e-8

    def test_cross_entropy_bad_label(self):
        with pytest.raises(ContractError):
            ag.cross_entropy(Tensor([0.0, 0.0]), 2)

    def test_affine_norm_standardizes(self):
        x = np.random.default_rng(0).standard_normal((50, 3)) * 4 + 2
        out = ag.affine_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-5)

    def test_affine_norm_gradient(self):
        rng = np.random.default_rng(2)
        x = Parameter(rng.standard_normal((10, 3)))
        g, b = Parameter(rng.uniform(0.5, 2, 3)), Parameter(rng.standard_normal(3))
        w = rng.standard_normal((10, 3))
        assert ag.grad_check(lambda: (ag.affine_norm(x, g, b) * w).sum(), [x, g, b]) < 1e-7

    def test_edge_matvec_equals_per_channel_dots(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 2, 6))
        k = rng.standard_normal((4, 2, 6, 5))
        out = ag.edge_matvec(Tensor(x), Tensor(k)).data
        dots = np.array([[[x[i, j] @ k[i, j, :, m] for m in range(5)] for j in range(2)] for i in range(4)])
        np.testing.assert_allclose(out, dots, atol=1e-13)
