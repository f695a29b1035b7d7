import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamperfool import autodiff as ad
from tamperfool.autodiff import Tensor
from tamperfool.errors import DimensionError, DomainError, GraphError, UpdateError

from gradcheck import check_gradients


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# forward semantics


class TestConvForward:
    def test_identity_kernel(self):
        x = rng().uniform(size=(1, 4, 4))
        k = np.ones((1, 1, 1, 1))
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), stride=1, padding=0)
        np.testing.assert_allclose(out.data, x)

    def test_zero_kernel_and_bias(self):
        x = rng(1).uniform(size=(3, 5, 5))
        k = np.zeros((2, 3, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(2)), stride=1, padding=1)
        assert np.all(out.data == 0)

    def test_ones_box_kernel_counts_neighbourhood(self):
        # 3x3 ones input, 3x3 ones kernel, padding 1: each output counts the
        # valid neighbours, giving 9 in the centre, 6 on edges, 4 in corners
        x = np.ones((1, 3, 3))
        k = np.ones((1, 1, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), stride=1, padding=1)
        expected = np.array([[[4, 6, 4], [6, 9, 6], [4, 6, 4]]], dtype=float)
        np.testing.assert_allclose(out.data, expected)

    def test_matches_direct_convolution_oracle(self):
        r = rng(7)
        x = r.standard_normal((2, 6, 5))
        k = r.standard_normal((3, 2, 3, 3))
        b = r.standard_normal(3)
        for stride, padding in [(1, 0), (1, 1), (2, 1), (2, 0)]:
            out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, padding).data
            expected = direct_conv(x, k, b, stride, padding)
            np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_names_axis(self):
        x = np.zeros((3, 4, 4))
        k = np.zeros((1, 2, 3, 3))
        with pytest.raises(DimensionError, match="channel"):
            ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), 1, 1)

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError, match="odd"):
            ad.conv2d(
                Tensor(np.zeros((1, 4, 4))),
                Tensor(np.zeros((1, 1, 2, 2))),
                Tensor(np.zeros(1)),
                1,
                0,
            )

    def test_empty_output_rejected(self):
        with pytest.raises(DimensionError):
            ad.conv2d(
                Tensor(np.zeros((1, 2, 2))),
                Tensor(np.zeros((1, 1, 5, 5))),
                Tensor(np.zeros(1)),
                1,
                0,
            )


def direct_conv(x, k, b, stride, padding):
    """Quadruple-loop cross-correlation used as the independent oracle."""
    c_out, c_in, ks, _ = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (xp.shape[1] - ks) // stride + 1
    w_out = (xp.shape[2] - ks) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = xp[:, i * stride : i * stride + ks, j * stride : j * stride + ks]
                out[co, i, j] = np.sum(patch * k[co]) + b[co]
    return out


class TestElementwiseForward:
    def test_relu(self):
        out = ad.relu(Tensor(np.array([-2.0, 0.0, 3.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 3.0])

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(np.array(0.0))).item() == pytest.approx(0.5)

    def test_sigmoid_strictly_inside_unit_interval(self):
        x = np.array([-1e4, -50.0, 0.0, 50.0, 1e4], dtype=np.float32)
        out = ad.sigmoid(Tensor(x)).data
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_upsample_scalar_map(self):
        out = ad.upsample_nearest2x(Tensor(np.array([[3.5]])))
        np.testing.assert_array_equal(out.data, np.full((2, 2), 3.5))

    def test_upsample_channelwise(self):
        x = rng(3).standard_normal((2, 2, 3))
        out = ad.upsample_nearest2x(Tensor(x)).data
        assert out.shape == (2, 4, 6)
        np.testing.assert_array_equal(out[:, ::2, ::2], x)
        np.testing.assert_array_equal(out[:, 1::2, 1::2], x)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestLossForward:
    def test_bce_perfect_prediction(self):
        ones = np.ones((4, 4))
        loss = ad.bce_loss(Tensor(ones), Tensor(ones))
        assert abs(loss.item()) <= 1e-6

    def test_bce_uniform_half(self):
        pred = np.full((3, 3), 0.5)
        target = (rng(5).uniform(size=(3, 3)) > 0.5).astype(float)
        loss = ad.bce_loss(Tensor(pred), Tensor(target))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-5)

    def test_bce_matches_direct_formula(self):
        r = rng(11)
        p = r.uniform(0.05, 0.95, size=(2, 2))
        t = r.uniform(size=(2, 2))
        loss = ad.bce_loss(Tensor(p), Tensor(t)).item()
        s = ad.BCE_STABILIZER
        expected = -np.mean(t * np.log(p + s) + (1 - t) * np.log(1 - p + s))
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_bce_empty_tensor(self):
        with pytest.raises(DomainError):
            ad.bce_loss(Tensor(np.zeros((0,))), Tensor(np.zeros((0,))))

    def test_l2_zero(self):
        assert ad.l2_norm(Tensor(np.zeros((3, 3)))).item() == 0.0

    def test_l2_three_four(self):
        assert ad.l2_norm(Tensor(np.array([3.0, 4.0]))).item() == pytest.approx(5.0)

    def test_l2_matches_sum_of_squares_oracle(self):
        x = rng(13).standard_normal(10)
        total = 0.0
        for v in x:
            total += v * v
        assert ad.l2_norm(Tensor(x)).item() == pytest.approx(math.sqrt(total), abs=1e-9)


class TestSignClip:
    def test_sign_values(self):
        out = ad.sign(Tensor(np.array([2.0, -0.5, 0.0])))
        np.testing.assert_array_equal(out.data, [1.0, -1.0, 0.0])
        assert not out.requires_grad

    def test_clip01_values(self):
        out = ad.clip01(Tensor(np.array([-0.2, 1.3, 0.5])))
        np.testing.assert_array_equal(out.data, [0.0, 1.0, 0.5])
        assert not out.requires_grad

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=16))
    def test_sign_idempotent(self, values):
        t = Tensor(np.array(values))
        np.testing.assert_array_equal(ad.sign(ad.sign(t)).data, ad.sign(t).data)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=16))
    def test_clip_idempotent(self, values):
        t = Tensor(np.array(values))
        np.testing.assert_array_equal(ad.clip01(ad.clip01(t)).data, ad.clip01(t).data)


# ---------------------------------------------------------------------------
# backward correctness


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        loss = ad.mul(x, x)
        loss.backward()
        assert float(x.grad) == pytest.approx(6.0)

    def test_bce_of_sigmoid_at_zero(self):
        # d/dw of -log(sigmoid(w)) at w=0 is sigmoid(0) - 1 = -0.5
        w = Tensor(np.array(0.0), requires_grad=True)
        loss = ad.bce_loss(ad.sigmoid(w), Tensor(np.array(1.0)))
        loss.backward()
        assert float(w.grad) == pytest.approx(-0.5, abs=1e-6)

    def test_backward_non_scalar_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(GraphError):
            ad.relu(x).backward()

    def test_backward_twice_identical(self):
        x = Tensor(rng(17).standard_normal((4, 4)), requires_grad=True)
        loss = ad.bce_loss(ad.sigmoid(x), Tensor(np.full((4, 4), 0.25)))
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(first, x.grad)

    def test_reused_node_accumulates(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = ad.add(ad.mul(x, x), x)  # x^2 + x
        y.backward()
        assert float(x.grad) == pytest.approx(5.0)

    def test_linearity_of_backward(self):
        r = rng(19)
        x_val = r.uniform(0.2, 0.8, size=(3, 3))
        t_val = r.uniform(size=(3, 3))
        a, b = 2.5, -1.25

        def grad_of(builder):
            x = Tensor(x_val.copy(), requires_grad=True)
            builder(x).backward()
            return x.grad

        f = lambda x: ad.bce_loss(x, Tensor(t_val))
        g = lambda x: ad.l2_norm(x)
        combined = lambda x: ad.add(ad.mul(f(x), Tensor(a)), ad.mul(g(x), Tensor(b)))
        lhs = grad_of(combined)
        rhs = a * grad_of(f) + b * grad_of(g)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_determinism_forward_and_grad(self):
        def run():
            x = Tensor(rng(23).standard_normal((2, 8, 8)), requires_grad=True)
            k = Tensor(rng(29).standard_normal((1, 2, 3, 3)), requires_grad=True)
            out = ad.sigmoid(ad.conv2d(x, k, Tensor(np.zeros(1)), 1, 1))
            loss = ad.bce_loss(out, Tensor(np.zeros(out.shape)))
            loss.backward()
            return loss.item(), x.grad.copy(), k.grad.copy()

        l1, gx1, gk1 = run()
        l2, gx2, gk2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gk1, gk2)


class TestGradientsAgainstFiniteDifferences:
    """Central-difference checks in float64, h=1e-5, rel err <= 1e-5."""

    def test_conv2d(self):
        r = rng(31)
        x = r.uniform(-1, 1, size=(2, 5, 5))
        k = r.uniform(-1, 1, size=(2, 2, 3, 3))
        b = r.uniform(-1, 1, size=2)
        for stride, padding in [(1, 1), (2, 1), (1, 0)]:
            check_gradients(
                lambda xt, kt, bt: ad.l2_norm(ad.conv2d(xt, kt, bt, stride, padding)),
                [x, k, b],
            )

    def test_relu(self):
        x = rng(37).uniform(-1, 1, size=(4, 4)) + 0.01  # keep away from the kink
        check_gradients(lambda t: ad.l2_norm(ad.relu(t)), [x])

    def test_sigmoid(self):
        x = rng(41).uniform(-3, 3, size=(4, 4))
        check_gradients(
            lambda t: ad.bce_loss(ad.sigmoid(t), Tensor(np.full((4, 4), 0.3))), [x]
        )

    def test_upsample(self):
        x = rng(43).uniform(-1, 1, size=(2, 3, 3))
        check_gradients(lambda t: ad.l2_norm(ad.upsample_nearest2x(t)), [x])

    def test_add_mul_sub(self):
        r = rng(47)
        a = r.uniform(-1, 1, size=(3, 3))
        b = r.uniform(-1, 1, size=(3, 3))
        check_gradients(lambda x, y: ad.l2_norm(ad.mul(ad.add(x, y), ad.sub(x, y))), [a, b])

    def test_bce(self):
        r = rng(53)
        p = r.uniform(0.1, 0.9, size=(3, 3))
        t = r.uniform(0.1, 0.9, size=(3, 3))
        check_gradients(lambda pt, tt: ad.bce_loss(pt, tt), [p, t])

    def test_l2(self):
        x = rng(59).uniform(-1, 1, size=(10,))
        check_gradients(lambda t: ad.l2_norm(t), [x])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_random_small_graphs(self, seed):
        r = np.random.default_rng(seed)
        x = r.uniform(-2, 2, size=(2, 4, 4))
        k = r.uniform(-1, 1, size=(1, 2, 3, 3))
        b = r.uniform(-1, 1, size=1)
        target = r.uniform(0.05, 0.95, size=(1, 4, 4))

        def build(xt, kt, bt):
            return ad.bce_loss(
                ad.sigmoid(ad.conv2d(xt, kt, bt, 1, 1)), Tensor(target)
            )

        check_gradients(build, [x, k, b])


# ---------------------------------------------------------------------------
# Adam


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = ad.Adam({"p": p}, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.state.step_count == 1

    def test_first_step_matches_hand_recurrence(self):
        p = Tensor(np.array(0.0), requires_grad=True)
        p.grad = np.array(1.0)
        opt = ad.Adam({"p": p}, lr=0.003)
        opt.step()
        # step 1: m_hat = v_hat = 1, so the update is -lr / (1 + eps)
        assert float(p.data) == pytest.approx(-0.003 / (1.0 + 1e-8), abs=1e-6)

    def test_two_steps_match_hand_recurrence(self):
        lr, b1, b2, eps = 0.003, 0.9, 0.999, 1e-8
        p = Tensor(np.array(0.0), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=lr, beta1=b1, beta2=b2, epsilon_stab=eps)

        # independent recurrence with constant gradient 1
        theta, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)

        for _ in range(2):
            p.grad = np.array(1.0)
            opt.step()
        assert float(p.data) == pytest.approx(theta, abs=1e-9)

    def test_second_moment_nonnegative(self):
        p = Tensor(rng(61).standard_normal(8), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=0.01)
        for i in range(5):
            p.grad = rng(62 + i).standard_normal(8)
            opt.step()
            assert np.all(opt.state.second_moment["p"] >= 0)
        assert opt.state.step_count == 5

    def test_non_finite_gradient_names_parameter(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        opt = ad.Adam({"weights": p})
        with pytest.raises(UpdateError, match="weights"):
            opt.step()
