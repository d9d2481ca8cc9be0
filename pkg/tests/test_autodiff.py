import math

import numpy as np
import pytest

from adetag import autodiff as ad
from adetag.autodiff import (
    DegenerateMaskError,
    ShapeMismatch,
    Tape,
    Tensor,
    add,
    concat,
    cross_entropy,
    dropout,
    finite_diff_check,
    lookup,
    matmul,
    max_over_rows,
    mul,
    scale,
    segment,
    sigmoid_op,
    softmax,
    stack,
    sum_op,
    tanh_op,
    windows,
)

SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(autouse=True)
def debug_checks():
    ad.set_debug_checks(True)
    yield
    ad.set_debug_checks(False)


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestFiniteDiffOracle:
    def test_sum_of_squares_analytic(self):
        # independent sanity check of the oracle itself
        x = Tensor([1.0, 2.0, 3.0])

        def f(t):
            return sum_op(mul(t, t))

        err = finite_diff_check(f, x)
        assert err < 1e-8
        x.requires_grad = True
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-12)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = rand(rng, 3, 3)
        eye = Tensor(np.eye(3))
        np.testing.assert_array_equal(matmul(eye, m).data, m.data)

    def test_hand_computed(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b).data, [[3.0], [7.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        b = Tensor(rng.standard_normal((4, 3)))
        a = rand(rng, 5, 4)
        err = finite_diff_check(lambda t: sum_op(matmul(t, b)), a)
        assert err < 1e-4
        a2 = Tensor(rng.standard_normal((5, 4)))
        b2 = rand(rng, 4, 3)
        err = finite_diff_check(lambda t: sum_op(matmul(a2, t)), b2)
        assert err < 1e-4

    @pytest.mark.parametrize("seed", SEEDS[:2])
    def test_vector_cases(self, seed):
        rng = np.random.default_rng(seed)
        m = Tensor(rng.standard_normal((4, 3)))
        v = rand(rng, 3)
        assert finite_diff_check(lambda t: sum_op(matmul(m, t)), v) < 1e-4
        v2 = rand(rng, 4)
        assert finite_diff_check(lambda t: sum_op(matmul(t, m)), v2) < 1e-4


class TestConcat:
    def test_word_embedding_widths(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 200), rand(rng, 200)
        assert concat([a, b]).shape == (400,)

    def test_single_part_identity(self):
        x = Tensor([1.0, 2.0])
        np.testing.assert_array_equal(concat([x]).data, x.data)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeMismatch):
            concat([Tensor([1.0]), Tensor([2.0])], axis=1)

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeMismatch):
            concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient_routing_per_part(self, seed):
        rng = np.random.default_rng(seed)
        other = Tensor(rng.standard_normal(4))
        weights = Tensor(rng.standard_normal(7))
        for position in (0, 1):
            part = rand(rng, 3)
            parts = [part, other] if position == 0 else [other, part]
            err = finite_diff_check(
                lambda t: sum_op(mul(concat(parts), weights)), part)
            assert err < 1e-4


class TestSoftmax:
    def test_constant_input_uniform(self):
        for c in (-3.0, 0.0, 42.0):
            out = softmax(Tensor([c, c, c, c]))
            np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-15)

    def test_large_logits_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0]))
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-300)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.standard_normal(9) * 10
            p = softmax(Tensor(x)).data
            assert abs(p.sum() - 1.0) < 1e-12
            p_shift = softmax(Tensor(x + 123.456)).data
            np.testing.assert_allclose(p, p_shift, atol=1e-12)

    def test_masked_positions_exact_zero(self):
        mask = np.array([True, False, True, False])
        p = softmax(Tensor([1.0, 5.0, 2.0, 5.0]), mask=mask).data
        assert p[1] == 0.0 and p[3] == 0.0
        assert abs(p.sum() - 1.0) < 1e-12

    def test_all_masked_raises(self):
        with pytest.raises(DegenerateMaskError):
            softmax(Tensor([1.0, 2.0]), mask=np.array([False, False]))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_jacobian_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        probe = Tensor(rng.standard_normal(6))
        x = rand(rng, 6)
        err = finite_diff_check(lambda t: sum_op(mul(softmax(t), probe)), x)
        assert err < 1e-4

    def test_explicit_jacobian_columns(self):
        rng = np.random.default_rng(11)
        x = rand(rng, 4)
        for j in range(4):
            err = finite_diff_check(lambda t: sum_op(segment(softmax(t), j, j + 1)), x)
            assert err < 1e-4

    @pytest.mark.parametrize("seed", SEEDS[:3])
    def test_masked_jacobian(self, seed):
        rng = np.random.default_rng(seed)
        mask = np.array([True, True, False, True, False])
        probe = Tensor(rng.standard_normal(5))
        x = rand(rng, 5)
        err = finite_diff_check(
            lambda t: sum_op(mul(softmax(t, mask=mask), probe)), x)
        assert err < 1e-4


class TestElementwise:
    def test_analytic_values(self):
        assert tanh_op(Tensor([0.0])).data[0] == 0.0
        assert sigmoid_op(Tensor([0.0])).data[0] == 0.5

    def test_tanh_gradient_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        with Tape() as tape:
            loss = sum_op(tanh_op(x))
        tape.backward(loss)
        assert x.grad[0] == pytest.approx(1.0)

    def test_sigmoid_extreme_inputs_stable(self):
        out = sigmoid_op(Tensor([-1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-300)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            add(Tensor([1.0]), Tensor([1.0, 2.0]))
        with pytest.raises(ShapeMismatch):
            mul(Tensor([1.0]), Tensor([1.0, 2.0]))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_all_four_pass_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        other = Tensor(rng.standard_normal((5, 7)))
        probe = Tensor(rng.standard_normal((5, 7)))
        cases = {
            "tanh": lambda t: sum_op(mul(tanh_op(t), probe)),
            "sigmoid": lambda t: sum_op(mul(sigmoid_op(t), probe)),
            "add": lambda t: sum_op(mul(add(t, other), probe)),
            "mul": lambda t: sum_op(mul(mul(t, other), probe)),
        }
        for name, f in cases.items():
            x = rand(rng, 5, 7)
            assert finite_diff_check(f, x) < 1e-4, name


class TestLookup:
    def test_identity_table(self):
        table = Tensor(np.eye(4))
        np.testing.assert_array_equal(lookup(table, 2).data, [0, 0, 1, 0])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            lookup(Tensor(np.eye(4)), 4)

    def test_repeated_lookup_doubles_gradient(self):
        table = Tensor(np.eye(4), requires_grad=True)
        with Tape() as tape:
            loss = sum_op(add(lookup(table, 1), lookup(table, 1)))
        tape.backward(loss)
        np.testing.assert_array_equal(table.grad[1], [2.0] * 4)
        assert np.all(table.grad[[0, 2, 3]] == 0.0)

    def test_frozen_table_accumulates_nothing(self):
        table = Tensor(np.eye(4), requires_grad=False)
        with Tape() as tape:
            loss = sum_op(lookup(table, 1))
        tape.backward(loss)
        assert table.grad is None


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor([1.0, 2.0])
        out = dropout(x, 0.0, True, np.random.default_rng(0))
        assert out is x

    def test_eval_mode_identity(self):
        x = Tensor([1.0, 2.0])
        out = dropout(x, 0.5, False, np.random.default_rng(0))
        assert out is x

    def test_survivor_fraction(self):
        rng = np.random.default_rng(99)
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.5, True, rng)
        survivors = np.count_nonzero(out.data) / 100_000
        assert abs(survivors - 0.5) < 0.01
        # survivors scaled by 1/(1-rate)
        assert np.all(np.isin(out.data, [0.0, 2.0]))

    def test_gradient_with_fixed_mask(self):
        rng = np.random.default_rng(3)
        x = rand(rng, 40)

        def f(t):
            return sum_op(dropout(t, 0.5, True, np.random.default_rng(123)))

        assert finite_diff_check(f, x) < 1e-4


class TestCrossEntropy:
    def test_one_hot_correct(self):
        dist = Tensor([0.0, 1.0, 0.0])
        assert cross_entropy(dist, 1).item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_five_classes(self):
        dist = Tensor([0.2] * 5)
        assert cross_entropy(dist, 3).item() == pytest.approx(math.log(5), abs=1e-12)

    def test_confident_wrong_is_floored(self):
        dist = Tensor([1.0, 0.0])
        assert cross_entropy(dist, 1).item() == pytest.approx(-math.log(1e-12))

    def test_gold_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(Tensor([0.5, 0.5]), 2)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient_through_softmax_composition(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 6)
        gold = int(rng.integers(0, 6))
        err = finite_diff_check(lambda t: cross_entropy(softmax(t), gold), x)
        assert err < 1e-4


class TestStructuralOps:
    @pytest.mark.parametrize("seed", SEEDS[:3])
    def test_stack_segment_reshape_scale_grads(self, seed):
        rng = np.random.default_rng(seed)
        probe = Tensor(rng.standard_normal((3, 4)))
        x = rand(rng, 4)
        others = [Tensor(rng.standard_normal(4)) for _ in range(2)]
        err = finite_diff_check(
            lambda t: sum_op(mul(stack([t, others[0], others[1]]), probe)), x)
        assert err < 1e-4

        y = rand(rng, 9)
        assert finite_diff_check(lambda t: sum_op(segment(t, 2, 6)), y) < 1e-4
        z = rand(rng, 6)
        probe2 = Tensor(rng.standard_normal((2, 3)))
        assert finite_diff_check(
            lambda t: sum_op(mul(ad.reshape(t, (2, 3)), probe2)), z) < 1e-4
        assert finite_diff_check(lambda t: scale(sum_op(t), 0.37), z) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS[:3])
    def test_windows_and_max_over_rows_grads(self, seed):
        rng = np.random.default_rng(seed)
        m = rand(rng, 7, 3)
        probe = Tensor(rng.standard_normal((5, 9)))
        err = finite_diff_check(lambda t: sum_op(mul(windows(t, 3), probe)), m)
        assert err < 1e-4
        m2 = rand(rng, 6, 5)
        probe2 = Tensor(rng.standard_normal(5))
        err = finite_diff_check(lambda t: sum_op(mul(max_over_rows(t), probe2)), m2)
        assert err < 1e-4

    def test_windows_layout(self):
        m = Tensor(np.arange(8.0).reshape(4, 2))
        out = windows(m, 2)
        np.testing.assert_array_equal(
            out.data,
            [[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7]])

    def test_max_over_rows_value(self):
        m = Tensor([[1.0, 9.0], [5.0, 2.0]])
        np.testing.assert_array_equal(max_over_rows(m).data, [5.0, 9.0])


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = sum_op(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_diamond_graph_accumulates_both_paths(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            a = scale(x, 3.0)
            b = scale(x, 5.0)
            loss = sum_op(add(a, b))
        tape.backward(loss)
        assert x.grad[0] == pytest.approx(8.0)

    def test_fanout_equals_sum_of_per_consumer_grads(self):
        # graph surgery: run consumers one at a time, compare with joint run
        rng = np.random.default_rng(5)
        base = rng.standard_normal(4)
        w1 = Tensor(rng.standard_normal(4))
        w2 = Tensor(rng.standard_normal(4))

        def consumer1(t):
            return sum_op(mul(tanh_op(t), w1))

        def consumer2(t):
            return sum_op(mul(sigmoid_op(t), w2))

        x = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            loss = add(consumer1(x), consumer2(x))
        tape.backward(loss)
        joint = x.grad.copy()

        parts = np.zeros(4)
        for consumer in (consumer1, consumer2):
            xs = Tensor(base.copy(), requires_grad=True)
            with Tape() as tape:
                loss = consumer(xs)
            tape.backward(loss)
            parts += xs.grad
        np.testing.assert_allclose(joint, parts, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = tanh_op(x)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)

    def test_grads_accumulate_across_tapes(self):
        x = Tensor([1.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = scale(x, 2.0)
            tape.backward(loss)
        assert x.grad[0] == pytest.approx(4.0)

    def test_no_tape_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        y = tanh_op(x)
        assert y.grad is None and x.grad is None
