"""Engine operations: forward values, backward rules, structural properties."""

import math

import numpy as np
import pytest

from mdcn.errors import ContractViolationError
from mdcn.oracles import conv2d_reference
from mdcn.tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat_channels,
    conv2d,
    global_avg_pool,
    l1_loss,
    mean_all,
    mul,
    pixel_shuffle,
    relu,
    scale_channels,
    sigmoid,
    space_to_depth,
    zeros,
)


def t(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestTensor:
    def test_rejects_non_4d(self):
        with pytest.raises(ContractViolationError):
            Tensor(np.zeros((3, 3)))

    def test_item_requires_scalar(self):
        with pytest.raises(ContractViolationError):
            zeros((1, 2, 1, 1)).item()

    def test_grad_buffer_matches_shape(self):
        x = zeros((2, 3, 4, 5), requires_grad=True)
        x.zero_grad()
        assert x.grad.shape == x.data.shape


class TestConv2d:
    def test_identity_kernel(self):
        x = t(np.arange(2 * 3 * 4 * 4).reshape(2, 3, 4, 4))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = conv2d(x, t(w), zeros((1, 3, 1, 1), dtype=np.float64))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_padding_pattern(self):
        """Zero padding forces 4 at corners, 6 at edge midpoints, 9 center."""
        out = conv2d(
            t(np.ones((1, 1, 3, 3))),
            t(np.ones((1, 1, 3, 3))),
            zeros((1, 1, 1, 1), dtype=np.float64),
        )
        np.testing.assert_array_equal(
            out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]]
        )

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=(1, 3, 1, 1))
        got = conv2d(t(x), t(w), t(b)).data
        np.testing.assert_allclose(got, conv2d_reference(x, w, b), atol=1e-6)

    def test_channel_mismatch_names_dims(self):
        with pytest.raises(ContractViolationError, match="2 channels.*expects 3"):
            conv2d(zeros((1, 2, 4, 4)), zeros((4, 3, 3, 3)), zeros((1, 4, 1, 1)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ContractViolationError):
            conv2d(zeros((1, 2, 4, 4)), zeros((4, 2, 2, 2)), zeros((1, 4, 1, 1)))


class TestActivation:
    def test_relu_values(self):
        out = relu(t(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)))
        np.testing.assert_array_equal(out.data.ravel(), [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert sigmoid(zeros((1, 1, 1, 1), dtype=np.float64)).item() == 0.5

    def test_sigmoid_analytic_identity(self):
        out = sigmoid(t(np.full((1, 1, 1, 1), math.log(3.0))))
        assert out.item() == pytest.approx(0.75, abs=1e-12)

    def test_sigmoid_stable_at_extremes(self):
        out = sigmoid(t(np.array([-500.0, 500.0]).reshape(1, 1, 1, 2)))
        assert np.all(np.isfinite(out.data))


class TestAdd:
    def test_zero_identity(self):
        x = t(np.random.default_rng(0).normal(size=(1, 2, 3, 3)))
        np.testing.assert_array_equal(add(x, zeros(x.shape, np.float64)).data, x.data)

    def test_gradient_passes_through(self):
        # power-of-two size and +-1 projection keep every float op exact
        rng = np.random.default_rng(1)
        x = t(rng.normal(size=(1, 2, 4, 4)), grad=True)
        y = t(rng.normal(size=(1, 2, 4, 4)), grad=True)
        proj = t(rng.choice([-1.0, 1.0], size=(1, 2, 4, 4)))
        with Tape() as tape:
            loss = mean_all(mul(add(x, y), proj))
            backward(loss, tape)
        expected = proj.data / proj.data.size
        np.testing.assert_array_equal(x.grad, expected)
        np.testing.assert_array_equal(y.grad, expected)

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(2, 3, 4, 4))
        b = rng.normal(size=(2, 3, 4, 4))
        got = add(t(a), t(b)).data
        expected = np.empty_like(a)
        for idx in np.ndindex(a.shape):
            expected[idx] = a[idx] + b[idx]
        np.testing.assert_array_equal(got, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolationError):
            add(zeros((1, 2, 3, 3)), zeros((1, 2, 3, 4)))


class TestConcat:
    def test_ranges_in_listed_order(self):
        a = t(np.full((1, 2, 2, 2), 1.0))
        b = t(np.full((1, 3, 2, 2), 2.0))
        out = concat_channels([a, b])
        assert out.shape == (1, 5, 2, 2)
        np.testing.assert_array_equal(out.data[:, :2], a.data)
        np.testing.assert_array_equal(out.data[:, 2:], b.data)

    def test_single_input_identity(self):
        a = t(np.random.default_rng(3).normal(size=(1, 3, 2, 2)))
        np.testing.assert_array_equal(concat_channels([a]).data, a.data)

    def test_backward_isolates_unread_channels(self):
        rng = np.random.default_rng(4)
        a = t(rng.normal(size=(1, 2, 2, 2)), grad=True)
        b = t(rng.normal(size=(1, 3, 2, 2)), grad=True)
        # loss reads only channels 2..4 (all of b, none of a)
        mask = np.zeros((1, 5, 2, 2))
        mask[:, 2:] = 1.0
        with Tape() as tape:
            loss = mean_all(mul(concat_channels([a, b]), t(mask)))
            backward(loss, tape)
        np.testing.assert_array_equal(a.grad, np.zeros_like(a.data))
        assert np.any(b.grad)

    def test_gradient_mass_conserved(self):
        # exact assertion: split gradients reassemble into the upstream bit for bit
        rng = np.random.default_rng(5)
        xs = [t(rng.normal(size=(1, c, 4, 4)), grad=True) for c in (1, 3, 4)]
        proj = t(rng.choice([-1.0, 1.0], size=(1, 8, 4, 4)))
        with Tape() as tape:
            loss = mean_all(mul(concat_channels(xs), proj))
            backward(loss, tape)
        upstream = proj.data / proj.data.size
        stacked = np.concatenate([x.grad for x in xs], axis=1)
        np.testing.assert_array_equal(stacked, upstream)

    def test_empty_list_rejected(self):
        with pytest.raises(ContractViolationError):
            concat_channels([])

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ContractViolationError):
            concat_channels([zeros((1, 1, 2, 2)), zeros((1, 1, 3, 2))])


class TestGlobalAvgPool:
    def test_constant_channel(self):
        out = global_avg_pool(t(np.full((1, 1, 4, 4), 5.0)))
        assert out.item() == 5.0

    def test_known_mean(self):
        out = global_avg_pool(t(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2)))
        assert out.item() == 2.5

    def test_output_shape(self):
        assert global_avg_pool(zeros((2, 8, 5, 7))).shape == (2, 8, 1, 1)

    def test_channelwise_constants_returned(self):
        consts = np.arange(1.0, 5.0)
        x = np.broadcast_to(consts.reshape(1, 4, 1, 1), (1, 4, 3, 5)).copy()
        out = global_avg_pool(t(x))
        np.testing.assert_allclose(out.data.ravel(), consts)


class TestScaleChannels:
    def test_ones_identity(self):
        x = t(np.random.default_rng(6).normal(size=(1, 3, 2, 2)))
        s = t(np.ones((1, 3, 1, 1)))
        np.testing.assert_array_equal(scale_channels(x, s).data, x.data)

    def test_halving(self):
        x = t(np.random.default_rng(7).normal(size=(1, 3, 2, 2)))
        s = t(np.full((1, 3, 1, 1), 0.5))
        np.testing.assert_allclose(scale_channels(x, s).data, x.data / 2)

    def test_gate_gradient_is_channel_sum(self):
        rng = np.random.default_rng(8)
        x = t(rng.normal(size=(1, 3, 4, 4)))
        s = t(rng.uniform(0.2, 1.0, size=(1, 3, 1, 1)), grad=True)
        proj = t(rng.normal(size=(1, 3, 4, 4)))
        with Tape() as tape:
            loss = mean_all(mul(scale_channels(x, s), proj))
            backward(loss, tape)
        upstream = proj.data / proj.data.size
        expected = (upstream * x.data).sum(axis=(2, 3), keepdims=True)
        np.testing.assert_allclose(s.grad, expected, rtol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ContractViolationError):
            scale_channels(zeros((1, 3, 2, 2)), zeros((1, 2, 1, 1)))


class TestPixelShuffle:
    def test_stated_mapping(self):
        x = t(np.array([1.0, 2, 3, 4]).reshape(1, 4, 1, 1))
        out = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1, 2], [3, 4]])

    def test_r1_identity(self):
        x = t(np.random.default_rng(9).normal(size=(1, 3, 4, 4)))
        np.testing.assert_array_equal(pixel_shuffle(x, 1).data, x.data)

    def test_round_trip_exact(self):
        for r in (2, 3):
            x = t(np.random.default_rng(r).normal(size=(2, 2 * r * r, 3, 4)))
            back = space_to_depth(pixel_shuffle(x, r), r)
            np.testing.assert_array_equal(back.data, x.data)

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ContractViolationError):
            pixel_shuffle(zeros((1, 3, 2, 2)), 2)


class TestL1Loss:
    def test_identical_is_zero(self):
        x = t(np.random.default_rng(10).normal(size=(1, 2, 3, 3)))
        assert l1_loss(x, t(x.data.copy())).item() == 0.0

    def test_constant_difference(self):
        x = zeros((2, 3, 4, 4), np.float64)
        y = t(np.full((2, 3, 4, 4), 2.0))
        assert l1_loss(x, y).item() == 2.0

    def test_subgradient_values(self):
        rng = np.random.default_rng(11)
        pred = t(rng.normal(size=(1, 2, 3, 3)), grad=True)
        target = t(rng.normal(size=(1, 2, 3, 3)))
        with Tape() as tape:
            backward(l1_loss(pred, target), tape)
        n = pred.data.size
        assert np.isin(pred.grad, [-1.0 / n, 0.0, 1.0 / n]).all()

    def test_target_must_not_require_grad(self):
        with pytest.raises(ContractViolationError):
            l1_loss(zeros((1, 1, 2, 2)), zeros((1, 1, 2, 2), requires_grad=True))


class TestBackward:
    def test_mean_gradient_uniform(self):
        x = t(np.random.default_rng(12).normal(size=(1, 2, 3, 3)), grad=True)
        with Tape() as tape:
            backward(mean_all(x), tape)
        np.testing.assert_allclose(x.grad, np.full_like(x.data, 1.0 / x.data.size))

    def test_unreachable_leaf_untouched(self):
        x = t(np.ones((1, 1, 2, 2)), grad=True)
        y = t(np.ones((1, 1, 2, 2)), grad=True)
        y.zero_grad()
        with Tape() as tape:
            backward(mean_all(x), tape)
        np.testing.assert_array_equal(y.grad, np.zeros_like(y.data))

    def test_non_scalar_loss_rejected(self):
        x = t(np.ones((1, 1, 2, 2)), grad=True)
        with Tape() as tape:
            out = relu(x)
            with pytest.raises(ContractViolationError):
                backward(out, tape)

    def test_loss_off_tape_rejected(self):
        x = t(np.ones((1, 1, 2, 2)), grad=True)
        with Tape():
            pass
        loss = mean_all(x)  # produced with no tape active... on a fresh one
        tape = Tape()
        with pytest.raises(ContractViolationError):
            backward(loss, tape)

    def test_repeated_backward_accumulates(self):
        x = t(np.ones((1, 1, 2, 2)), grad=True)
        with Tape() as tape:
            loss = mean_all(x)
            backward(loss, tape)
            backward(loss, tape)
        np.testing.assert_allclose(x.grad, np.full_like(x.data, 2.0 / x.data.size))

    def test_sigmoid_conv_chain_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        x_arr = rng.normal(size=(1, 2, 4, 4))
        w_arr = rng.normal(size=(3, 2, 3, 3))
        b_arr = rng.normal(size=(1, 3, 1, 1))
        proj = rng.normal(size=(1, 3, 4, 4))

        def run(xa, wa, ba):
            out = sigmoid(conv2d(Tensor(xa), Tensor(wa), Tensor(ba)))
            return mean_all(mul(out, Tensor(proj))).item()

        x, w, b = t(x_arr, True), t(w_arr, True), t(b_arr, True)
        with Tape() as tape:
            loss = mean_all(mul(sigmoid(conv2d(x, w, b)), Tensor(proj)))
            backward(loss, tape)
        step = 1e-5
        for which, (leaf, base) in enumerate(((x, x_arr), (w, w_arr), (b, b_arr))):
            numeric = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                args_p = [x_arr.copy(), w_arr.copy(), b_arr.copy()]
                args_m = [x_arr.copy(), w_arr.copy(), b_arr.copy()]
                args_p[which][idx] += step
                args_m[which][idx] -= step
                numeric[idx] = (run(*args_p) - run(*args_m)) / (2 * step)
            denom = np.maximum.reduce(
                [np.abs(numeric), np.abs(leaf.grad), np.full_like(numeric, 1e-8)]
            )
            assert (np.abs(numeric - leaf.grad) / denom).max() < 1e-5


class TestGradientSweep:
    """Central finite differences across random shapes for every op."""

    @pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 4, 5), (2, 4, 6, 6)])
    def test_random_shapes(self, shape):
        rng = np.random.default_rng(sum(shape))
        ops = []
        x = rng.normal(size=shape)
        proj = rng.normal(size=shape)
        ops.append(("sigmoid", [x], lambda ts: mean_all(mul(sigmoid(ts[0]), Tensor(proj)))))
        y = rng.normal(size=shape)
        ops.append(("mul", [x, y], lambda ts: mean_all(mul(mul(ts[0], ts[1]), Tensor(proj)))))
        for name, arrays, fn in ops:
            tensors = [Tensor(a, requires_grad=True) for a in arrays]
            with Tape() as tape:
                loss = fn(tensors)
                backward(loss, tape)
            step = 1e-5
            for i, base in enumerate(arrays):
                numeric = np.zeros_like(base)
                for idx in np.ndindex(base.shape):
                    plus = [a.copy() for a in arrays]
                    minus = [a.copy() for a in arrays]
                    plus[i][idx] += step
                    minus[i][idx] -= step
                    numeric[idx] = (fn([Tensor(a) for a in plus]).item()
                                    - fn([Tensor(a) for a in minus]).item()) / (2 * step)
                denom = np.maximum.reduce(
                    [np.abs(numeric), np.abs(tensors[i].grad), np.full_like(numeric, 1e-8)]
                )
                worst = (np.abs(numeric - tensors[i].grad) / denom).max()
                assert worst < 1e-5, f"{name} leaf {i}: {worst}"

    def test_single_precision_within_loose_tolerance(self):
        """float32 analytic gradients against a trustworthy float64 stencil."""
        rng = np.random.default_rng(77)
        x_arr = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        w_arr = (rng.normal(size=(2, 2, 3, 3)) * 0.5).astype(np.float32)
        b_arr = np.zeros((1, 2, 1, 1), dtype=np.float32)
        proj = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)

        def run64(wa):
            out = conv2d(
                Tensor(x_arr.astype(np.float64)),
                Tensor(wa),
                Tensor(b_arr.astype(np.float64)),
            )
            return mean_all(mul(out, Tensor(proj.astype(np.float64)))).item()

        w = Tensor(w_arr.copy(), requires_grad=True)
        with Tape() as tape:
            loss = mean_all(mul(conv2d(Tensor(x_arr), w, Tensor(b_arr)), Tensor(proj)))
            backward(loss, tape)
        assert w.grad.dtype == np.float32
        step = 1e-5
        numeric = np.zeros(w_arr.shape, dtype=np.float64)
        base = w_arr.astype(np.float64)
        for idx in np.ndindex(w_arr.shape):
            plus = base.copy()
            minus = base.copy()
            plus[idx] += step
            minus[idx] -= step
            numeric[idx] = (run64(plus) - run64(minus)) / (2 * step)
        denom = np.maximum.reduce(
            [np.abs(numeric), np.abs(w.grad.astype(np.float64)), np.full_like(numeric, 1e-8)]
        )
        assert (np.abs(numeric - w.grad) / denom).max() < 1e-3


class TestFiniteForward:
    def test_all_ops_finite_on_finite_inputs(self):
        rng = np.random.default_rng(14)
        x = t(rng.normal(size=(2, 4, 4, 4)) * 100)
        w = t(rng.normal(size=(4, 4, 3, 3)))
        b = t(rng.normal(size=(1, 4, 1, 1)))
        outs = [
            conv2d(x, w, b),
            relu(x),
            sigmoid(x),
            add(x, x),
            mul(x, x),
            concat_channels([x, x]),
            global_avg_pool(x),
            scale_channels(x, t(rng.normal(size=(2, 4, 1, 1)))),
            pixel_shuffle(x, 2),
            l1_loss(x, t(rng.normal(size=x.shape))),
            mean_all(x),
        ]
        for out in outs:
            assert np.all(np.isfinite(out.data))
