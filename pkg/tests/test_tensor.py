import math
from fractions import Fraction

import numpy as np
import pytest

from drcn import tensor as T
from drcn.tensor import Tensor


def param(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_dot_product(self):
        assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.item() == 11.0

    def test_gradient(self, rng):
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        assert T.grad_check(lambda: T.sum_(T.mul(T.matmul(a, b), w)), [a, b]) < 1e-7

    def test_hand_backward(self, rng):
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        T.sum_(T.mul(T.matmul(a, b), g)).backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(T.DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConcat:
    def test_single_input_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 2)))
        assert np.array_equal(T.concat([x], axis=0).data, x.data)

    def test_split_inverse(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
        out = T.concat([a, b], axis=0)
        assert np.array_equal(out.data, [1, 2, 3, 4])
        assert np.array_equal(out.data[:2], a.data) and np.array_equal(out.data[2:], b.data)

    def test_sum_gradient_is_ones(self, rng):
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(2, 5)))
        T.sum_(T.concat([a, b], axis=-1)).backward()
        assert np.array_equal(a.grad, np.ones((2, 3)))

    def test_backward_routes_slices_unchanged(self, rng):
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(2, 5)))
        g = rng.normal(size=(2, 8))
        T.sum_(T.mul(T.concat([a, b], axis=-1), g)).backward()
        assert np.array_equal(a.grad, g[:, :3]) and np.array_equal(b.grad, g[:, 3:])

    def test_errors(self):
        with pytest.raises(ValueError):
            T.concat([], axis=0)
        with pytest.raises(T.DimensionError):
            T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=-1)


class TestSoftmaxMasked:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_masked(Tensor(np.zeros(3)), np.ones(3)).data,
                                   [1 / 3] * 3, rtol=1e-15)

    def test_single_survivor(self):
        assert np.array_equal(T.softmax_masked(Tensor([1.0, 1.0]), [1, 0]).data, [1.0, 0.0])

    def test_extended_precision_oracle(self):
        out = T.softmax_masked(Tensor([1.0, 2.0, 3.0]), np.ones(3)).data
        ex = [math.exp(k) for k in (1, 2, 3)]
        ref = [e / math.fsum(ex) for e in ex]
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_all_masked_row_raises(self):
        with pytest.raises(T.DegenerateMaskError):
            T.softmax_masked(Tensor(np.zeros((2, 3))), np.array([[1, 0, 0], [0, 0, 0]]))

    def test_gradient(self, rng):
        s = param(rng.normal(size=(4, 5)))
        mask = (rng.random((4, 5)) < 0.7).astype(float)
        mask[:, 0] = 1
        w = rng.normal(size=(4, 5))
        assert T.grad_check(lambda: T.sum_(T.mul(T.softmax_masked(s, mask), w)), [s]) < 1e-6


class TestCosine:
    def test_self_similarity(self, rng):
        x = rng.normal(size=7)
        assert abs(T.cosine(Tensor(x), Tensor(x)).item() - 1.0) < 1e-9

    def test_orthogonal(self):
        assert T.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_reference_formula(self):
        u, v = [1, 2, 3], [4, 5, 6]
        dot = Fraction(sum(a * b for a, b in zip(u, v)))
        ref = float(dot) / (math.sqrt(14) * math.sqrt(77) + T.COSINE_EPS)
        assert abs(T.cosine(Tensor(u), Tensor(v)).item() - ref) < 1e-15

    def test_zero_vector_is_finite(self):
        assert T.cosine(Tensor(np.zeros(3)), Tensor([1.0, 2.0, 3.0])).item() == 0.0

    def test_matrix_gradient(self, rng):
        a, b = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(2, 5, 4)))
        w = rng.normal(size=(2, 3, 5))
        assert T.grad_check(lambda: T.sum_(T.mul(T.cosine_matrix(a, b), w)), [a, b]) < 1e-6


class TestMaxPool:
    def test_single_step(self, rng):
        x = rng.normal(size=(1, 4))
        out, rec = T.max_pool_time(Tensor(x), np.ones(1))
        assert np.array_equal(out.data, x[0]) and np.all(rec.argmax_index == 0)

    def test_paper_sizing(self, rng):
        out, _ = T.max_pool_time(Tensor(rng.normal(size=(30, 100))), np.ones(30))
        assert out.shape == (100,)

    def test_brute_force_masked(self, rng):
        x = rng.normal(size=(5, 3))
        out, rec = T.max_pool_time(Tensor(x), np.array([1, 1, 1, 0, 0]))
        for d in range(3):
            col = [x[t, d] for t in range(3)]
            assert out.data[d] == max(col)
            assert rec.argmax_index[d] == col.index(max(col))

    def test_ties_go_to_lowest_index(self):
        _, rec = T.max_pool_time(Tensor(np.ones((4, 2))), np.ones(4))
        assert np.all(rec.argmax_index == 0)

    def test_backward_only_at_winners(self, rng):
        x = param(rng.normal(size=(3, 6, 4)))
        mask = np.ones((3, 6))
        mask[1, 4:] = 0
        out, rec = T.max_pool_time(x, mask)
        T.sum_(out).backward()
        winners = np.zeros_like(x.data)
        np.put_along_axis(winners, rec.argmax_index[:, None, :], 1.0, axis=1)
        assert np.array_equal(x.grad, winners)
        assert np.all(mask[np.arange(3)[:, None], rec.argmax_index] == 1)

    def test_all_masked_raises(self):
        with pytest.raises(T.DegenerateMaskError):
            T.max_pool_time(Tensor(np.ones((3, 2))), np.zeros(3))

    def test_rates_partition(self, rng):
        _, rec = T.max_pool_time(Tensor(rng.normal(size=(2, 5, 9))), np.ones((2, 5)))
        np.testing.assert_allclose(rec.rates(5).sum(axis=-1), 1.0, atol=1e-12)


class TestGradCheck:
    def test_quadratic(self, rng):
        x = param(rng.normal(size=5))
        assert T.grad_check(lambda: T.sum_(T.mul(x, x)), [x]) < 1e-9

    def test_single_lstm_step(self, rng):
        x = param(rng.normal(size=(2, 1, 3)))
        w, u = param(rng.normal(size=(3, 8)) * 0.5), param(rng.normal(size=(2, 8)) * 0.5)
        b = param(rng.normal(size=8) * 0.1)
        f = lambda: T.sum_(T.mul(T.lstm(x, np.ones((2, 1)), w, u, b), 1.5))
        assert T.grad_check(f, [x, w, u, b]) < 1e-6

    def test_non_finite_objective(self):
        x = param([1.0])
        with pytest.raises(T.EvaluationError):
            T.grad_check(lambda: Tensor(np.array(np.inf)), [x])

    def test_detail_names_worst(self, rng):
        x = param(rng.normal(size=3))
        res = T.grad_check_detail(lambda: T.sum_(T.tanh(x)), [x], names=["x"])
        assert res.worst_param == "x" and float(res) < 1e-8


@pytest.mark.parametrize("op", ["add", "sub", "mul", "abs", "tanh", "sigmoid", "relu",
                                "linear", "mean", "take", "swapaxes", "reshape"])
def test_elementwise_and_shape_ops_grad(op, rng):
    a = param(rng.normal(size=(3, 4)) + 0.05)
    b = param(rng.normal(size=(3, 4)))
    w = param(rng.normal(size=(4, 2)))
    c = param(rng.normal(size=2))
    fns = {
        "add": lambda: T.add(a, b), "sub": lambda: T.sub(a, b), "mul": lambda: T.mul(a, b),
        "abs": lambda: T.abs_(a), "tanh": lambda: T.tanh(a), "sigmoid": lambda: T.sigmoid(a),
        "relu": lambda: T.relu(a), "linear": lambda: T.linear(a, w, c),
        "mean": lambda: T.mean(a, axis=0), "take": lambda: T.take(a, (slice(None), [0, 0, 2])),
        "swapaxes": lambda: T.swapaxes(a, 0, 1), "reshape": lambda: T.reshape(a, (2, 6)),
    }
    probe = rng.normal(size=fns[op]().shape)
    assert T.grad_check(lambda: T.sum_(T.mul(fns[op](), probe)), [a, b, w, c]) < 1e-6


class TestTape:
    def test_fan_out_accumulates(self):
        x = param([2.0])
        T.sum_(T.add(T.mul(x, x), x)).backward()
        assert x.grad[0] == 5.0

    def test_reverse_of_recording_order(self):
        x = param([1.0])
        with T.Tape() as tape:
            T.sum_(T.tanh(T.mul(x, 3.0)))
        assert [op for op, _ in tape.nodes] == ["mul", "tanh", "sum"]

    def test_no_grad_records_nothing(self):
        x = param([1.0])
        with T.no_grad():
            y = T.mul(x, 2.0)
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_output_raises(self):
        with pytest.raises(T.NonFiniteError):
            T.mul(Tensor([np.inf]), 0.0)

    def test_float32_mode(self):
        with T.dtype_scope(np.float32):
            assert Tensor([1.0, 2.0]).dtype == np.float32


class TestNNPrimitives:
    def test_dropout_eval_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        assert T.dropout(x, 0.5, rng, training=False) is x

    def test_dropout_inverted_scaling(self):
        out = T.dropout(Tensor(np.ones(20000)), 0.8, np.random.default_rng(0), training=True)
        assert set(np.unique(out.data)) <= {0.0, 1.25}
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_embedding_pad_row_and_sparse_grad(self, rng):
        table = param(rng.normal(size=(5, 3)))
        ids = np.array([[2, 2, 0], [4, 1, 0]])
        out = T.embedding(table, ids)
        assert np.all(out.data[:, 2] == 0)
        T.sum_(out).backward()
        assert np.array_equal(table.grad.sum(axis=1), [0, 3, 6, 0, 3])

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding(Tensor(np.ones((3, 2))), np.array([3]))

    def test_batch_norm_grad_and_running_stats(self, rng):
        x = param(rng.normal(size=(6, 4)))
        g, b = param(rng.normal(size=4)), param(rng.normal(size=4))
        probe = rng.normal(size=(6, 4))

        def f():
            return T.sum_(T.mul(T.batch_norm(x, g, b, np.zeros(4), np.ones(4), True), probe))
        assert T.grad_check(f, [x, g, b]) < 1e-6
        rm, rv = np.zeros(4), np.ones(4)
        T.batch_norm(x, g, b, rm, rv, training=True)
        np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=0), rtol=1e-12)

    def test_cross_entropy(self, rng):
        z = param(rng.normal(size=(4, 3)))
        labels = np.array([0, 2, 1, 1])
        ref = -np.mean([z.data[i, labels[i]] - np.log(np.exp(z.data[i]).sum()) for i in range(4)])
        assert abs(T.cross_entropy(z, labels).item() - ref) < 1e-14
        assert T.grad_check(lambda: T.cross_entropy(z, labels), [z]) < 1e-7


class TestLSTM:
    def test_zero_weights_zero_output(self):
        out = T.lstm(Tensor(np.ones((2, 3, 4))), np.ones((2, 3)), np.zeros((4, 8)),
                     np.zeros((2, 8)), np.zeros(8))
        assert np.array_equal(out.data, np.zeros((2, 3, 2)))

    def test_hand_computed_step(self):
        # one unit, one input: gates i, f, o, g
        w = np.array([[0.5, -0.3, 0.8, 0.2]])
        u = np.array([[0.1, 0.1, 0.1, 0.1]])
        b = np.array([0.1, 1.0, -0.2, 0.05])
        x = 0.7
        sig = lambda z: 1 / (1 + math.exp(-z))
        i, o = sig(0.5 * x + 0.1), sig(0.8 * x - 0.2)
        g = math.tanh(0.2 * x + 0.05)
        h = o * math.tanh(i * g)
        out = T.lstm(Tensor([[[x]]]), np.ones((1, 1)), w, u, b)
        assert abs(out.data.item() - h) < 1e-10

    def test_reverse_symmetry(self, rng):
        x = rng.normal(size=(1, 5, 3))
        w, u, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        fw = T.lstm(Tensor(x), np.ones((1, 5)), w, u, b).data
        bw = T.lstm(Tensor(x[:, ::-1]), np.ones((1, 5)), w, u, b, reverse=True).data
        np.testing.assert_allclose(fw, bw[:, ::-1], rtol=1e-13)

    def test_padding_does_not_leak(self, rng):
        w, u, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        x = rng.normal(size=(1, 3, 3))
        padded = np.concatenate([x, rng.normal(size=(1, 2, 3))], axis=1)
        mask = np.array([[1, 1, 1, 0, 0]])
        for rev in (False, True):
            short = T.lstm(Tensor(x), np.ones((1, 3)), w, u, b, reverse=rev).data
            long = T.lstm(Tensor(padded), mask, w, u, b, reverse=rev).data
            np.testing.assert_allclose(long[:, :3], short, rtol=1e-13)
            assert np.all(long[:, 3:] == 0)

    def test_masked_gradient(self, rng):
        x = param(rng.normal(size=(2, 4, 3)))
        w, u, b = param(rng.normal(size=(3, 8))), param(rng.normal(size=(2, 8))), param(np.zeros(8))
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
        probe = rng.normal(size=(2, 4, 2))
        for rev in (False, True):
            f = lambda: T.sum_(T.mul(T.lstm(x, mask, w, u, b, reverse=rev), probe))
            assert T.grad_check(f, [x, w, u, b]) < 1e-6
