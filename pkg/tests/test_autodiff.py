import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import nodec.autodiff as ad
from nodec.autodiff import ShapeMismatch, Tape

from helpers import assert_grad_close, fd_grads_multi, finite_difference


def scalar_loss(var):
    return ad.reduce_sum(var) if var.size > 1 else var


def check_unary(op, x, rel=1e-5):
    tape = Tape()
    v = tape.leaf(x)
    out = op(v)
    grads = tape.backward(scalar_loss(out))
    fd = finite_difference(lambda arr: float(np.asarray(_value(op, arr)).sum()), np.asarray(x, dtype=float))
    assert_grad_close(grads.wrt(v), fd, rel=rel)


def _value(op, arr):
    tape = Tape(record=False)
    return op(tape.leaf(arr)).value


class TestElementwise:
    def test_sin_at_zero_grad_one(self):
        tape = Tape()
        x = tape.leaf(0.0)
        y = ad.sin(x)
        g = tape.backward(y)
        assert float(g.wrt(x)) == 1.0

    def test_relu_negative_branch(self):
        tape = Tape()
        x = tape.leaf(-2.0)
        g = tape.backward(ad.relu(x))
        assert float(g.wrt(x)) == 0.0

    def test_elu_closed_form_and_fd(self):
        tape = Tape()
        x = tape.leaf(-1.0)
        y = ad.elu(x)
        assert np.isclose(float(y.value), np.exp(-1) - 1, atol=1e-12)
        g = tape.backward(y)
        assert np.isclose(float(g.wrt(x)), np.exp(-1), atol=1e-12)
        fd = finite_difference(lambda a: float(_value(ad.elu, a)), np.array(-1.0))
        assert_grad_close(g.wrt(x), fd)

    @pytest.mark.parametrize("op", [ad.sin, ad.cos, ad.exp, ad.square, ad.neg, ad.elu])
    def test_unary_grads_match_fd(self, op):
        rng = np.random.default_rng(1)
        for shape in [(), (3,), (2, 3)]:
            check_unary(op, rng.uniform(-2, 2, size=shape))

    def test_sqrt_grad(self):
        rng = np.random.default_rng(2)
        check_unary(ad.sqrt, rng.uniform(0.5, 4.0, size=(4,)))

    def test_relu_grad_away_from_kink(self):
        x = np.array([-1.5, -0.3, 0.4, 1.9])
        check_unary(ad.relu, x)

    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
    def test_binary_grads_match_fd(self, op):
        rng = np.random.default_rng(3)
        a = rng.uniform(-2, 2, size=(2, 2))
        b = rng.uniform(-2, 2, size=(2, 2))

        def f(arrays):
            tape = Tape(record=False)
            return float(op(tape.leaf(arrays[0]), tape.leaf(arrays[1])).value.sum())

        tape = Tape()
        va, vb = tape.leaf(a), tape.leaf(b)
        grads = tape.backward(ad.reduce_sum(op(va, vb)))
        fd_a, fd_b = fd_grads_multi(f, [a, b])
        assert_grad_close(grads.wrt(va), fd_a)
        assert_grad_close(grads.wrt(vb), fd_b)

    def test_scalar_tensor_broadcast(self):
        tape = Tape()
        a = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
        s = tape.leaf(2.0)
        out = ad.mul(a, s)
        g = tape.backward(ad.reduce_sum(out))
        assert g.wrt(s).shape == ()
        assert float(g.wrt(s)) == pytest.approx(10.0)

    def test_shape_mismatch_reports_both_shapes(self):
        tape = Tape()
        a = tape.leaf(np.zeros((2, 3)))
        b = tape.leaf(np.zeros((3, 2)))
        with pytest.raises(ShapeMismatch) as exc:
            ad.add(a, b)
        assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)

    def test_elementwise_dispatcher(self):
        tape = Tape(record=False)
        a = tape.leaf([1.0, 2.0])
        assert np.allclose(ad.elementwise("neg", a).value, [-1, -2])
        b = tape.leaf([3.0, 4.0])
        assert np.allclose(ad.elementwise("add", a, b).value, [4, 6])
        with pytest.raises(ValueError):
            ad.elementwise("nope", a)


class TestMatmul:
    def test_identity(self):
        tape = Tape(record=False)
        out = ad.matmul(tape.leaf(np.eye(2)), tape.leaf([[1.0], [2.0]]))
        assert np.array_equal(out.value, [[1.0], [2.0]])

    def test_hand_sum(self):
        tape = Tape(record=False)
        out = ad.matmul(tape.leaf([[1.0, 2.0], [3.0, 4.0]]), tape.leaf([[1.0], [1.0]]))
        assert np.array_equal(out.value, [[3.0], [7.0]])

    def test_grads_match_fd(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-2, 2, size=(3, 4))
        b = rng.uniform(-2, 2, size=(4, 2))

        def f(arrays):
            tape = Tape(record=False)
            return float(ad.matmul(tape.leaf(arrays[0]), tape.leaf(arrays[1])).value.sum())

        tape = Tape()
        va, vb = tape.leaf(a), tape.leaf(b)
        grads = tape.backward(ad.reduce_sum(ad.matmul(va, vb)))
        fd_a, fd_b = fd_grads_multi(f, [a, b])
        assert_grad_close(grads.wrt(va), fd_a)
        assert_grad_close(grads.wrt(vb), fd_b)

    def test_matvec_and_vecmat(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, size=(3, 4))
        v = rng.uniform(-1, 1, size=4)
        tape = Tape()
        va, vv = tape.leaf(a), tape.leaf(v)
        g = tape.backward(ad.reduce_sum(ad.matmul(va, vv)))
        fd_a, fd_v = fd_grads_multi(
            lambda arrs: float(arrs[0] @ arrs[1] @ np.ones(3)) if False else float((arrs[0] @ arrs[1]).sum()),
            [a, v])
        assert_grad_close(g.wrt(va), fd_a)
        assert_grad_close(g.wrt(vv), fd_v)

    def test_inner_extent_mismatch(self):
        tape = Tape()
        with pytest.raises(ShapeMismatch):
            ad.matmul(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros((2, 3))))


class TestReduce:
    def test_mean_backward(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0, 3.0])
        out = ad.reduce_mean(x)
        assert float(out.value) == pytest.approx(2.0)
        g = tape.backward(out)
        assert np.allclose(g.wrt(x), [1 / 3] * 3)

    def test_min_first_winner_tie_break(self):
        tape = Tape()
        x = tape.leaf([3.0, 1.0, 1.0])
        out = ad.reduce_min(x)
        assert float(out.value) == 1.0
        g = tape.backward(out)
        assert np.array_equal(g.wrt(x), [0.0, 1.0, 0.0])

    def test_max_is_neg_min_of_neg(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-5, 5, size=100)
        tape = Tape(record=False)
        assert float(ad.reduce_max(tape.leaf(x)).value) == -float(
            ad.reduce_min(tape.leaf(-x)).value)

    def test_axis_mean_grad(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-2, 2, size=(3, 4))
        tape = Tape()
        v = tape.leaf(x)
        out = ad.reduce_sum(ad.axis_mean(v, axis=1))
        g = tape.backward(out)
        fd = finite_difference(lambda a: float(a.mean(axis=1).sum()), x)
        assert_grad_close(g.wrt(v), fd)

    def test_empty_tensor_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            ad.reduce_sum(tape.leaf(np.zeros(0)))

    def test_reduce_dispatcher(self):
        tape = Tape(record=False)
        x = tape.leaf([[1.0, 3.0], [5.0, 7.0]])
        assert float(ad.reduce("sum", x).value) == 16.0
        assert np.allclose(ad.reduce("axis-mean", x, axis=0).value, [3.0, 5.0])


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        tape = Tape(record=False)
        out = ad.softmax(tape.leaf([0.0, 0.0, 0.0]))
        assert np.allclose(out.value, [1 / 3] * 3, atol=1e-15)

    def test_large_logits_no_overflow(self):
        tape = Tape(record=False)
        out = ad.softmax(tape.leaf([1000.0, 0.0]))
        assert np.all(np.isfinite(out.value))
        assert out.value[0] == pytest.approx(1.0)

    def test_jacobian_vs_fd(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-2, 2, size=5)
        for j in range(5):
            tape = Tape()
            v = tape.leaf(x)
            out = ad.gather(ad.softmax(v), [j], axis=0)
            g = tape.backward(ad.reduce_sum(out))

            def f(a, j=j):
                e = np.exp(a - a.max())
                return float((e / e.sum())[j])

            assert_grad_close(g.wrt(v), finite_difference(f, x))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
           st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        tape = Tape(record=False)
        x = np.array(logits)
        out = ad.softmax(tape.leaf(x)).value
        shifted = ad.softmax(tape.leaf(x + shift)).value
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.max(np.abs(out - shifted)) <= 1e-12


class TestStructural:
    def test_gather_duplicate_indices_accumulate(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0, 3.0])
        out = ad.gather(x, [0, 0, 2], axis=0)
        g = tape.backward(ad.reduce_sum(out))
        assert np.array_equal(g.wrt(x), [2.0, 0.0, 1.0])

    def test_gather_axis1_and_reshape_grads(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-2, 2, size=(2, 4))
        tape = Tape()
        v = tape.leaf(x)
        out = ad.reshape(ad.gather(v, [3, 1], axis=1), (4,))
        g = tape.backward(ad.reduce_sum(out))
        fd = finite_difference(lambda a: float(a[:, [3, 1]].sum()), x)
        assert_grad_close(g.wrt(v), fd)

    def test_concat_grads(self):
        rng = np.random.default_rng(10)
        a = rng.uniform(-1, 1, size=(1, 3))
        b = rng.uniform(-1, 1, size=(2, 3))
        tape = Tape()
        va, vb = tape.leaf(a), tape.leaf(b)
        out = ad.concat([va, vb], axis=0)
        g = tape.backward(ad.reduce_sum(ad.square(out)))
        fd_a, fd_b = fd_grads_multi(
            lambda arrs: float((np.concatenate(arrs, axis=0) ** 2).sum()), [a, b])
        assert_grad_close(g.wrt(va), fd_a)
        assert_grad_close(g.wrt(vb), fd_b)

    def test_stack_scalars_grads(self):
        tape = Tape()
        xs = [tape.leaf(v) for v in (1.0, -2.0, 0.5)]
        out = ad.stack_scalars(xs)
        g = tape.backward(ad.reduce_min(out))
        assert [float(g.wrt(x)) for x in xs] == [0.0, 1.0, 0.0]

    def test_const_ops_grads(self):
        rng = np.random.default_rng(11)
        a_const = rng.uniform(-1, 1, size=(3, 3))
        x = rng.uniform(-1, 1, size=3)
        tape = Tape()
        v = tape.leaf(x)
        out = ad.const_matmul(a_const, v)
        g = tape.backward(ad.reduce_sum(out))
        assert_grad_close(g.wrt(v), finite_difference(lambda z: float((a_const @ z).sum()), x))

        tape = Tape()
        v = tape.leaf(x)
        g = tape.backward(ad.reduce_sum(ad.const_mul(a_const[0], v)))
        assert np.allclose(g.wrt(v), a_const[0])


class TestBackward:
    def test_w_squared(self):
        tape = Tape()
        w = tape.leaf(3.0)
        g = tape.backward(ad.square(w))
        assert float(g.wrt(w)) == 6.0

    def test_unrolled_euler_grad_matches_fd(self):
        # 10 Euler steps of dx = -w x, loss = mean of stored states.
        def run(w_val, record):
            tape = Tape(record=record)
            w = tape.leaf(w_val)
            x = tape.leaf(1.0)
            samples = []
            for _ in range(10):
                x = x + ad.scale(ad.mul(ad.neg(w), x), 0.1)
                samples.append(x)
            loss = ad.reduce_mean(ad.stack_scalars(samples))
            return tape, w, loss

        tape, w, loss = run(0.7, True)
        g = tape.backward(loss)
        fd = finite_difference(lambda a: float(run(float(a), False)[2].value), np.array(0.7))
        assert_grad_close(g.wrt(w), fd)

    def test_disconnected_parameter_gets_zero(self):
        tape = Tape()
        w = tape.leaf([1.0, 2.0])
        x = tape.leaf(2.0)
        g = tape.backward(ad.square(x))
        assert np.array_equal(g.wrt(w), [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            tape.backward(x)

    def test_replay_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(12)
            tape = Tape()
            a = tape.leaf(rng.uniform(-2, 2, size=(3, 3)))
            b = tape.leaf(rng.uniform(-2, 2, size=(3, 3)))
            out = ad.reduce_mean(ad.elu(ad.matmul(a, ad.sin(b))))
            g = tape.backward(out)
            return out.value.tobytes(), g.wrt(a).tobytes(), g.wrt(b).tobytes()

        assert run() == run()

    def test_node_ids_strictly_increase(self):
        tape = Tape()
        a = tape.leaf(1.0)
        b = ad.sin(a)
        c = ad.mul(a, b)
        assert a.id < b.id < c.id

    def test_record_off_produces_identical_values(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-2, 2, size=(4,))

        def run(record):
            tape = Tape(record=record)
            v = tape.leaf(x)
            return ad.softmax(ad.sin(ad.scale(v, 1.7))).value.tobytes()

        assert run(True) == run(False)
