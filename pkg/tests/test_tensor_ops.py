"""Kernel-level tests: forward oracles, analytic-vs-numeric gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texseg import (ConvParams, IGNORE_LABEL, ParamGrads, ShapeError, Tensor,
                    sgd_step, xavier_init)
from texseg.ops import (conv2d_backward, conv2d_forward,
                        conv_transpose2d_backward, conv_transpose2d_forward,
                        make_bilinear_upsample_params, maxpool_backward,
                        maxpool_forward, resize_bilinear,
                        softmax_xent_pixelwise, upsample)

import oracles


def rand_tensor(rng, shape):
    return Tensor(rng.standard_normal(shape))


class TestConvForward:
    def test_identity_kernel(self):
        x = Tensor(np.full((1, 1, 3, 3), 2.0))
        p = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
        out = conv2d_forward(x, p)
        assert np.array_equal(out.values, np.full((1, 1, 3, 3), 2.0))

    def test_window_overlap_counting(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        p = ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1), padding=1)
        out = conv2d_forward(x, p).values[0, 0]
        assert out[1, 1] == 9.0 and out[1, 2] == 9.0
        for y, x_ in [(0, 0), (0, 3), (3, 0), (3, 3)]:
            assert out[y, x_] == 4.0

    def test_matches_loop_oracle_strided(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        got = conv2d_forward(Tensor(x), ConvParams(w, b, stride=2, padding=1))
        want = oracles.conv2d_loops(x, w, b, 2, 1)
        assert np.max(oracles.rel_err(got.values, want, floor=1e-9)) < 1e-12

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 8, 8)))
        p = ConvParams(np.zeros((4, 2, 3, 3)), np.zeros(4))
        with pytest.raises(ShapeError, match="in_channels"):
            conv2d_forward(x, p)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_oracle_random_shapes(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 3))
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        s = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        h = int(rng.integers(k, 8))
        w = int(rng.integers(k, 8))
        x = rng.standard_normal((n, ci, h, w))
        wt = rng.standard_normal((co, ci, k, k))
        b = rng.standard_normal(co)
        got = conv2d_forward(Tensor(x), ConvParams(wt, b, stride=s, padding=pad))
        want = oracles.conv2d_loops(x, wt, b, s, pad)
        assert np.allclose(got.values, want, rtol=1e-12, atol=1e-12)


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(0)
        x = rand_tensor(rng, (1, 2, 5, 5))
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3),
                       padding=1)
        gx, gp = conv2d_backward(x, p, Tensor(np.zeros((1, 3, 5, 5))))
        assert not gx.values.any() and not gp.weights.any() and not gp.bias.any()

    def test_identity_kernel_passes_grad(self):
        rng = np.random.default_rng(1)
        x = rand_tensor(rng, (1, 1, 4, 4))
        p = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
        g = rand_tensor(rng, (1, 1, 4, 4))
        gx, _ = conv2d_backward(x, p, g)
        assert np.array_equal(gx.values, g.values)

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        r = rng.standard_normal((1, 2, 3, 3))  # fixed linear functional
        p = ConvParams(w, b, stride=2, padding=1)

        def objective():
            return float((conv2d_forward(Tensor(x), p).values * r).sum())

        gx, gp = conv2d_backward(Tensor(x), p, Tensor(r))
        for arr, analytic in ((x, gx.values), (w, gp.weights), (b, gp.bias)):
            fd, idx = oracles.finite_diff(objective, arr)
            assert np.max(oracles.rel_err(analytic.ravel()[idx], fd)) < 1e-5


class TestMaxPool:
    def test_constant_input(self):
        x = Tensor(np.full((1, 2, 4, 4), 3.5))
        out, _ = maxpool_forward(x)
        assert np.array_equal(out.values, np.full((1, 2, 2, 2), 3.5))

    def test_forced_argmax(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        out, cache = maxpool_forward(x)
        assert out.values[0, 0, 0, 0] == 4.0
        assert cache.argmax[0, 0, 0, 0] == 3

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 3, 8, 8))
        out, _ = maxpool_forward(Tensor(x))
        assert np.array_equal(out.values, oracles.maxpool_loops(x))

    def test_odd_extents_replicate(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 1, 5, 7))
        out, _ = maxpool_forward(Tensor(x))
        assert out.shape == (2, 1, 3, 4)
        assert np.array_equal(out.values, oracles.maxpool_loops(x))

    def test_backward_zero(self):
        rng = np.random.default_rng(5)
        _, cache = maxpool_forward(rand_tensor(rng, (1, 1, 4, 4)))
        g = maxpool_backward(cache, Tensor(np.zeros((1, 1, 2, 2))))
        assert not g.values.any()

    def test_backward_single_window(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        _, cache = maxpool_forward(x)
        g = maxpool_backward(cache, Tensor(np.full((1, 1, 1, 1), 2.5)))
        assert np.array_equal(g.values[0, 0], [[0, 0], [0, 2.5]])

    @pytest.mark.parametrize("shape", [(1, 2, 6, 6), (1, 1, 5, 6), (2, 1, 5, 5)])
    def test_backward_finite_differences(self, shape):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(shape)
        out, cache = maxpool_forward(Tensor(x))
        r = rng.standard_normal(out.shape)

        def objective():
            return float((maxpool_forward(Tensor(x))[0].values * r).sum())

        gx = maxpool_backward(cache, Tensor(r)).values
        # skip near-tie windows where max-pool is not differentiable
        fd, idx = oracles.finite_diff(objective, x)
        flat = gx.ravel()
        for j, i in enumerate(idx):
            if abs(flat[i] - fd[j]) > 1e-7:
                pytest.fail(f"maxpool grad mismatch at {i}")


class TestUpsample:
    def test_factor_one_identity(self):
        rng = np.random.default_rng(7)
        x = rand_tensor(rng, (1, 2, 3, 3))
        assert np.array_equal(upsample(x, 1).values, x.values)

    def test_factor_zero_rejected(self):
        with pytest.raises(ShapeError):
            upsample(Tensor(np.zeros((1, 1, 2, 2))), 0)

    def test_bilinear_monotone_interpolation(self):
        x = Tensor(np.array([[0.0, 2.0]])[None, None])
        out = upsample(x, 2).values[0, 0, 0]
        assert out.shape == (4,)
        assert np.all(out >= 0.0) and np.all(out <= 2.0)
        assert np.all(np.diff(out) >= 0.0)

    def test_learned_init_equals_bilinear(self):
        rng = np.random.default_rng(8)
        x = rand_tensor(rng, (1, 3, 5, 4))
        params = make_bilinear_upsample_params(3, 2)
        learned = conv_transpose2d_forward(x, params)
        fixed = upsample(x, 2, mode="bilinear")
        assert np.max(np.abs(learned.values - fixed.values)) < 1e-10

    @pytest.mark.parametrize("factor", [2, 3, 4])
    def test_matches_scatter_oracle(self, factor):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 2, 4, 3))
        got = upsample(Tensor(x), factor).values
        want = oracles.upsample_loops(x, factor)
        assert got.shape == (1, 2, 4 * factor, 3 * factor)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_transpose_backward_finite_differences(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 2, 4, 4))
        p = make_bilinear_upsample_params(2, 2)
        p.weights = rng.standard_normal(p.weights.shape)
        out = conv_transpose2d_forward(Tensor(x), p)
        r = rng.standard_normal(out.shape)

        def objective():
            return float((conv_transpose2d_forward(Tensor(x), p).values * r).sum())

        gx, gp = conv_transpose2d_backward(Tensor(x), p, Tensor(r))
        for arr, analytic in ((x, gx.values), (p.weights, gp.weights),
                              (p.bias, gp.bias)):
            fd, idx = oracles.finite_diff(objective, arr)
            assert np.max(oracles.rel_err(analytic.ravel()[idx], fd)) < 1e-5


class TestSoftmaxXent:
    def test_uniform_scores_log_c(self):
        for c in (2, 3, 5):
            scores = np.zeros((c, 4, 4))
            target = np.zeros((4, 4), dtype=np.uint8)
            res = softmax_xent_pixelwise(scores, target)
            assert res.loss == pytest.approx(np.log(c), rel=1e-12)

    def test_all_ignored(self):
        scores = np.random.default_rng(11).standard_normal((3, 2, 2))
        target = np.full((2, 2), IGNORE_LABEL, dtype=np.uint8)
        res = softmax_xent_pixelwise(scores, target)
        assert res.loss == 0.0 and not res.grad.any() and res.all_ignored

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(12)
        scores = rng.standard_normal((3, 2, 2))
        target = rng.integers(0, 3, size=(2, 2)).astype(np.uint8)
        target[0, 1] = IGNORE_LABEL
        res = softmax_xent_pixelwise(scores, target)
        loss, grad = oracles.softmax_xent_loops(scores, target, IGNORE_LABEL)
        assert res.loss == pytest.approx(loss, rel=1e-12)
        assert np.allclose(res.grad, grad, rtol=1e-12, atol=1e-15)

    def test_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(13)
        scores = rng.standard_normal((4, 5, 5)) * 3
        target = rng.integers(0, 4, size=(5, 5)).astype(np.uint8)
        target[2, 2] = IGNORE_LABEL
        res = softmax_xent_pixelwise(scores, target)
        sums = res.grad.sum(axis=0)
        assert np.max(np.abs(sums)) <= 1e-10

    def test_grad_finite_differences(self):
        rng = np.random.default_rng(14)
        scores = rng.standard_normal((3, 3, 3))
        target = rng.integers(0, 3, size=(3, 3)).astype(np.uint8)

        def objective():
            return softmax_xent_pixelwise(scores, target).loss

        res = softmax_xent_pixelwise(scores, target)
        fd, idx = oracles.finite_diff(objective, scores)
        assert np.max(oracles.rel_err(res.grad.ravel()[idx], fd, floor=1e-4)) < 1e-5


class TestSgd:
    def setup_method(self):
        self.params = {"w": ConvParams(np.full((1, 1, 1, 1), 2.0), np.zeros(1))}
        self.vel = {}

    def step(self, g, lr, mom, wd):
        grads = {"w": ParamGrads(np.full((1, 1, 1, 1), g), np.zeros(1))}
        sgd_step(self.params, grads, self.vel, lr, mom, wd)

    def test_zero_grad_zero_momentum_unchanged(self):
        self.step(0.0, 0.1, 0.0, 0.0)
        assert self.params["w"].weights[0, 0, 0, 0] == 2.0

    def test_scalar_recurrence_two_steps(self):
        # v1 = -lr*g1; w1 = w0 + v1; v2 = m*v1 - lr*g2; w2 = w1 + v2
        lr, m, g1, g2 = 0.1, 0.9, 1.0, -0.5
        self.step(g1, lr, m, 0.0)
        self.step(g2, lr, m, 0.0)
        v1 = -lr * g1
        w1 = 2.0 + v1
        v2 = m * v1 - lr * g2
        assert self.params["w"].weights[0, 0, 0, 0] == pytest.approx(w1 + v2,
                                                                     rel=1e-15)

    def test_weight_decay_contracts(self):
        self.step(0.0, 0.1, 0.0, 0.5)
        assert 0 < self.params["w"].weights[0, 0, 0, 0] < 2.0


class TestXavier:
    def test_support_bound(self):
        rng = np.random.default_rng(15)
        w = xavier_init((8, 4, 3, 3), rng)
        bound = np.sqrt(6.0 / (4 * 9 + 8 * 9))
        assert np.all(np.abs(w) <= bound)

    def test_deterministic(self):
        a = xavier_init((4, 4, 3, 3), np.random.default_rng(42))
        b = xavier_init((4, 4, 3, 3), np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_variance_monte_carlo(self):
        rng = np.random.default_rng(16)
        fan_in, fan_out = 10, 10
        draws = np.concatenate(
            [xavier_init((fan_out, fan_in), rng).ravel() for _ in range(1000)])
        assert draws.size >= 10**5
        want = 2.0 / (fan_in + fan_out)
        assert abs(draws.var() - want) / want < 0.05


class TestResize:
    def test_identity(self):
        rng = np.random.default_rng(17)
        img = rng.random((6, 8))
        assert np.allclose(resize_bilinear(img, (6, 8)), img)

    def test_constant_preserved(self):
        img = np.full((8, 8), 0.7)
        out = resize_bilinear(img, (2, 2))
        assert np.allclose(out, 0.7)

    def test_downsample_matches_average_on_linear_ramp(self):
        # bilinear sampling of a linear function reproduces it exactly
        ys = np.arange(16, dtype=float)
        img = np.tile(ys, (16, 1))
        out = resize_bilinear(img, (4, 4))
        src = (np.arange(4) + 0.5) * 4 - 0.5
        assert np.allclose(out[0], src)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_ops_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    p = ConvParams(w, b, padding=1)
    a = conv2d_forward(Tensor(x), p).values
    b2 = conv2d_forward(Tensor(x.copy()), ConvParams(w.copy(), b.copy(),
                                                     padding=1)).values
    assert np.array_equal(a, b2)
