"""Autodiff core: forward semantics, gradient oracle checks, tape contracts."""
import numpy as np
import pytest

import attrikit.tensor as tz
from attrikit.tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    conv2d,
    gather,
    max_pool2x2,
    no_grad_eval,
    tape,
    value_and_grad,
)

from oracles import conv2d_valid_loops, finite_difference_grad, max_relative_error

RNG = np.random.default_rng(42)


def ad_grad(fn, x):
    _, g = value_and_grad(fn, x)
    return g


class TestForwardSemantics:
    def test_add_elementwise(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal((a + b).data, [[6.0, 8.0], [10.0, 12.0]])

    def test_scalar_broadcast(self):
        a = Tensor([1.0, 2.0, 3.0])
        np.testing.assert_array_equal((a + 1.5).data, [2.5, 3.5, 4.5])
        np.testing.assert_array_equal((2.0 * a).data, [2.0, 4.0, 6.0])
        np.testing.assert_array_equal((a / 2.0).data, [0.5, 1.0, 1.5])

    def test_shape_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((3, 2)))
        with pytest.raises(ShapeError) as err:
            a + b
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)

    def test_matmul_hand_arithmetic(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        np.testing.assert_array_equal((a @ b).data, [[17.0], [39.0]])

    def test_matmul_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_relu_values(self):
        r = Tensor([-2.0, 0.0, 3.0]).relu()
        np.testing.assert_array_equal(r.data, [0.0, 0.0, 3.0])

    def test_softmax_symmetric(self):
        s = Tensor([0.0, 0.0]).softmax()
        np.testing.assert_allclose(s.data, [0.5, 0.5], rtol=0, atol=0)

    def test_softmax_rows_sum_to_one(self):
        z = Tensor(RNG.normal(size=(4, 7)))
        np.testing.assert_allclose(z.softmax().data.sum(axis=1), np.ones(4), atol=1e-12)

    def test_data_is_a_private_copy(self):
        src = np.ones(3)
        t = Tensor(src)
        src[0] = 99.0
        assert t.data[0] == 1.0

    def test_float64_contiguous(self):
        t = Tensor(np.asfortranarray(np.ones((3, 4), dtype=np.float32)))
        assert t.data.dtype == np.float64 and t.data.flags["C_CONTIGUOUS"]

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.inf])
        with pytest.raises(NonFiniteError):
            Tensor([0.0]).log()

    def test_max_pool_forward(self):
        x = np.arange(16, dtype=float).reshape(4, 4, 1)
        out = max_pool2x2(Tensor(x))
        np.testing.assert_array_equal(out.data[..., 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_max_pool_odd_dims_rejected(self):
        with pytest.raises(ShapeError):
            max_pool2x2(Tensor(np.zeros((3, 4, 1))))

    def test_conv2d_matches_loop_oracle(self):
        x = RNG.normal(size=(6, 5, 2))
        w = RNG.normal(size=(3, 3, 2, 4))
        b = RNG.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, conv2d_valid_loops(x, w, b), atol=1e-12)

    def test_gather_bounds(self):
        t = Tensor([1.0, 2.0])
        assert gather(t, 1).item() == 2.0
        with pytest.raises(IndexError):
            gather(t, 2)


class TestBackward:
    def test_dot_product_gradient_is_weights(self):
        w = np.array([2.0, -3.0, 0.5])
        g = ad_grad(lambda x: Tensor(w) @ x, np.array([1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(g, w)

    def test_relu_gradient_at_zero_is_zero(self):
        g = ad_grad(lambda x: x.relu().sum(), np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_square_gradient(self):
        g = ad_grad(lambda x: (x * x).sum(), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(g, [2.0, -4.0, 6.0])

    def test_intermediate_tensors_receive_grads(self):
        # needed downstream: channel-weight style reads of activation grads
        xt = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with tape() as t:
            h = xt * 3.0
            loss = h.sum()
        t.backward(loss)
        np.testing.assert_array_equal(h.grad, [1.0, 1.0])
        np.testing.assert_array_equal(xt.grad, [3.0, 3.0])

    def test_gradients_accumulate_until_zeroed(self):
        xt = Tensor(np.ones(2), requires_grad=True)
        for _ in range(2):
            with tape() as t:
                loss = (xt * 2.0).sum()
            t.backward(loss)
        np.testing.assert_array_equal(xt.grad, [4.0, 4.0])
        xt.zero_grad()
        assert xt.grad is None

    def test_backward_linearity(self):
        # grad(a*l1 + b*l2) == a*grad(l1) + b*grad(l2) to 1e-12
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.normal(size=5)
            w1 = rng.normal(size=5)
            w2 = rng.normal(size=5)
            a, b = rng.normal(size=2)

            g1 = ad_grad(lambda t: Tensor(w1) @ t, x)
            g2 = ad_grad(lambda t: (Tensor(w2) @ t).exp(), x)
            g_mix = ad_grad(lambda t: a * (Tensor(w1) @ t) + b * ((Tensor(w2) @ t).exp()), x)
            np.testing.assert_allclose(g_mix, a * g1 + b * g2, atol=1e-12)

    def test_two_layer_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        w1 = rng.normal(size=(8, 5)) * 0.7
        b1 = rng.normal(size=8) * 0.1
        w2 = rng.normal(size=(3, 8)) * 0.7
        b2 = rng.normal(size=3) * 0.1

        def net(xt):
            return gather((Tensor(w2) @ (Tensor(w1) @ xt + Tensor(b1)).relu() + Tensor(b2)).softmax(), 1)

        def net_np(x):
            h = np.maximum(w1 @ x + b1, 0.0)
            z = w2 @ h + b2
            e = np.exp(z - z.max())
            return (e / e.sum())[1]

        for _ in range(5):
            x = rng.normal(size=5)
            assert max_relative_error(ad_grad(net, x), finite_difference_grad(net_np, x)) < 1e-5


class TestPrimitiveGradientsAgainstFiniteDifferences:
    """Each primitive checked against the central-difference oracle with a
    random cotangent folded in through a weighted sum."""

    def check(self, build, x, seed=0):
        rng = np.random.default_rng(seed)
        probe = None

        def scalarize(t):
            nonlocal probe
            out = build(t)
            if probe is None:
                probe = rng.normal(size=out.shape)
            return (out * Tensor(probe)).sum()

        g = ad_grad(scalarize, x)
        fd = finite_difference_grad(lambda z: float((build(Tensor(z)).data * probe).sum()), x)
        assert max_relative_error(g, fd) < 1e-5

    def test_add(self):
        c = Tensor(RNG.normal(size=(3, 4)))
        self.check(lambda t: t + c, RNG.normal(size=(3, 4)))

    def test_sub_both_orders(self):
        c = Tensor(RNG.normal(size=4))
        self.check(lambda t: t - c, RNG.normal(size=4))
        self.check(lambda t: c - t, RNG.normal(size=4))

    def test_mul(self):
        c = Tensor(RNG.normal(size=(2, 5)))
        self.check(lambda t: t * c, RNG.normal(size=(2, 5)))

    def test_scalar_operand_side(self):
        self.check(lambda t: Tensor(np.ones((3, 3))) * t, np.array(1.7))

    def test_matmul_matrix_matrix(self):
        c = Tensor(RNG.normal(size=(4, 3)))
        self.check(lambda t: t @ c, RNG.normal(size=(2, 4)))
        self.check(lambda t: c @ t, RNG.normal(size=(3, 5)))

    def test_matmul_matrix_vector(self):
        c = Tensor(RNG.normal(size=(4, 3)))
        self.check(lambda t: c @ t, RNG.normal(size=3))
        self.check(lambda t: t @ c, RNG.normal(size=4))

    def test_matmul_dot(self):
        c = Tensor(RNG.normal(size=6))
        self.check(lambda t: t @ c, RNG.normal(size=6))

    def test_sigmoid(self):
        self.check(lambda t: t.sigmoid(), RNG.normal(size=7) * 3.0)

    def test_relu_away_from_kink(self):
        x = RNG.normal(size=9)
        x[np.abs(x) < 1e-3] = 0.5
        self.check(lambda t: t.relu(), x)

    def test_softmax_1d(self):
        self.check(lambda t: t.softmax(), RNG.normal(size=5))

    def test_softmax_2d(self):
        self.check(lambda t: t.softmax(), RNG.normal(size=(3, 4)))

    def test_log_softmax(self):
        self.check(lambda t: t.log_softmax(), RNG.normal(size=6))

    def test_log(self):
        self.check(lambda t: t.log(), RNG.uniform(0.5, 3.0, size=5))

    def test_exp(self):
        self.check(lambda t: t.exp(), RNG.normal(size=5))

    def test_sum_mean(self):
        self.check(lambda t: t.sum(), RNG.normal(size=(2, 3)))
        self.check(lambda t: t.mean(), RNG.normal(size=(2, 3)))

    def test_reshape(self):
        self.check(lambda t: t.reshape((6,)), RNG.normal(size=(2, 3)))

    def test_gather(self):
        self.check(lambda t: gather(t, 2), RNG.normal(size=5))

    def test_max_pool(self):
        # distinct entries keep the argmax away from ties
        x = RNG.permutation(np.arange(32, dtype=float)).reshape(4, 4, 2)
        self.check(lambda t: max_pool2x2(t), x)

    def test_conv2d_all_operands(self):
        x = RNG.normal(size=(5, 6, 2))
        w = RNG.normal(size=(3, 3, 2, 3))
        b = RNG.normal(size=3)
        self.check(lambda t: conv2d(t, Tensor(w), Tensor(b)), x)
        self.check(lambda t: conv2d(Tensor(x), t, Tensor(b)), w)
        self.check(lambda t: conv2d(Tensor(x), Tensor(w), t), b)


class TestMaxPoolTies:
    def test_tie_routes_gradient_to_first_window_position(self):
        x = np.zeros((2, 2, 1))  # all four candidates equal
        g = ad_grad(lambda t: max_pool2x2(t).sum(), x)
        np.testing.assert_array_equal(g[..., 0], [[1.0, 0.0], [0.0, 0.0]])


class TestTapeContract:
    def test_backward_twice_is_an_error(self):
        xt = Tensor(np.ones(2), requires_grad=True)
        with tape() as t:
            loss = xt.sum()
        t.backward(loss)
        with pytest.raises(TapeError):
            t.backward(loss)

    def test_backward_on_non_scalar_is_an_error(self):
        xt = Tensor(np.ones(2), requires_grad=True)
        with tape() as t:
            y = xt * 2.0
        with pytest.raises(TapeError):
            t.backward(y)

    def test_loss_off_tape_is_an_error(self):
        xt = Tensor(np.ones(2), requires_grad=True)
        with tape():
            loss = xt.sum()
        with tape() as other:
            with pytest.raises(TapeError):
                other.backward(loss)

    def test_untracked_loss_raises(self):
        loss = Tensor(np.ones(2)).sum()
        with pytest.raises(TapeError):
            tz.backward(loss)

    def test_side_branches_untouched_by_loss_get_no_grad(self):
        xt = Tensor(np.ones(2), requires_grad=True)
        with tape() as t:
            branch = xt * 5.0
            loss = xt.sum()
        t.backward(loss)
        assert branch.grad is None
        np.testing.assert_array_equal(xt.grad, [1.0, 1.0])


class TestUntrackedEvaluation:
    def _net(self, x):
        w = Tensor(np.linspace(-1, 1, 12).reshape(3, 4))
        return ((w @ x).relu()).sum()

    def test_zero_tape_growth_over_1000_evals(self):
        x = Tensor(np.ones(4))
        before = Tape.nodes_recorded_total
        for _ in range(1000):
            no_grad_eval(self._net, x)
        assert Tape.nodes_recorded_total == before

    def test_tracked_and_untracked_agree_bitwise(self):
        x = np.linspace(0.0, 1.0, 4)
        xt = Tensor(x, requires_grad=True)
        with tape():
            tracked = self._net(xt)
        untracked = no_grad_eval(self._net, Tensor(x))
        assert tracked.data.tobytes() == untracked.data.tobytes()

    def test_no_grad_suspends_recording_inside_tape(self):
        xt = Tensor(np.ones(4), requires_grad=True)
        with tape() as t:
            with tz.no_grad():
                self._net(xt)
            assert len(t.nodes) == 0


class TestDeterminism:
    def test_same_inputs_bitwise_same_outputs_and_grads(self):
        def run():
            rng = np.random.default_rng(123)
            x = rng.normal(size=6)
            w = rng.normal(size=(4, 6))
            val, g = value_and_grad(lambda t: ((Tensor(w) @ t).relu()).sum(), x)
            return val, g

        v1, g1 = run()
        v2, g2 = run()
        assert v1 == v2 and g1.tobytes() == g2.tobytes()
