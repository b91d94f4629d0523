"""Autodiff engine: primitives, gradients, Bessel numerics, containers."""

import numpy as np
import pytest

import magphase.autodiff as ad
from magphase.errors import InvalidArgumentError, NumericsError, ShapeError

import gradcheck


def rand(shape, seed, loc=0.0, scale=1.0):
    return loc + scale * np.random.default_rng(seed).standard_normal(shape)


class TestElementwiseExamples:
    def test_sum_of_squares_gradient(self):
        x = ad.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        loss = ad.tensor_sum(ad.square(x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_cos_gradient_at_zero(self):
        x = ad.Tensor(np.array(0.0), requires_grad=True)
        ad.cos(x).backward()
        assert x.grad == 0.0

    def test_gradient_accumulation_is_additive(self):
        x = ad.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        l1 = ad.tensor_sum(ad.square(x))
        l2 = ad.tensor_sum(ad.mul(x, 3.0))
        ad.add(l1, l2).backward()
        combined = x.grad.copy()

        x.grad = None
        ad.tensor_sum(ad.square(x)).backward()
        g1 = x.grad.copy()
        x.grad = None
        ad.tensor_sum(ad.mul(x, 3.0)).backward()
        g2 = x.grad.copy()
        np.testing.assert_array_equal(combined, g1 + g2)


class TestFiniteDifferences:
    """Central finite differences (h=1e-3, float64) vs analytic backward."""

    def test_binary_ops(self):
        a = rand((4, 3), 0)
        b = rand((4, 3), 1, loc=2.5)  # away from zero for div
        for f in (ad.add, ad.sub, ad.mul, ad.div, ad.atan2):
            gradcheck.check(f, [a, b])

    def test_unary_ops(self):
        x = rand((4, 3), 2, loc=1.5, scale=0.4)  # positive domain
        for f in (ad.exp, ad.log, ad.sqrt, ad.square, ad.negate):
            gradcheck.check(f, [x])
        y = rand((4, 3), 3)
        for f in (ad.cos, ad.sin, ad.tanh, ad.sigmoid, ad.softplus):
            gradcheck.check(f, [y])
        gradcheck.check(lambda t: ad.leaky_relu(t, 0.01), [y + 0.05])

    def test_reductions_and_reshape(self):
        x = rand((4, 3, 2), 4)
        gradcheck.check(lambda t: ad.tensor_sum(t, axis=1), [x])
        gradcheck.check(lambda t: ad.tensor_mean(t, axis=(0, 2)), [x])
        gradcheck.check(lambda t: ad.reshape(t, (2, 12)), [x])
        gradcheck.check(lambda t: ad.transpose(t, (2, 0, 1)), [x])
        gradcheck.check(lambda t: t[1:3, :2], [rand((4, 3), 5)])
        gradcheck.check(lambda t, u: ad.concat([t, u], axis=1),
                        [rand((2, 3), 6), rand((2, 2), 7)])

    def test_broadcasting(self):
        gradcheck.check(ad.mul, [rand((4, 3), 8), rand((3,), 9)])
        gradcheck.check(ad.add, [rand((4, 1), 10), rand((1, 3), 11)])

    def test_matmul(self):
        gradcheck.check(ad.matmul, [rand((3, 4), 12), rand((4, 2), 13)])
        gradcheck.check(ad.matmul, [rand((2, 3, 4), 14), rand((4, 2), 15)])

    def test_wrap_angle_gradient_is_identity(self):
        x = ad.Tensor(np.array([0.1, 4.0, -9.0]), requires_grad=True)
        ad.tensor_sum(ad.wrap_angle(x)).backward()
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_clamp_min_blocks_clamped_region(self):
        x = ad.Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        ad.tensor_sum(ad.clamp_min(x, 0.0)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0])


class TestConvolutions:
    def test_identity_1x1_kernel(self):
        x = rand((2, 3, 5, 4), 20)
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_avg_pool_subsamples(self):
        x = rand((1, 2, 8, 3), 21)
        out = ad.avg_pool(ad.Tensor(x), stride=2, axis=2)
        assert out.shape == (1, 2, 4, 3)
        np.testing.assert_array_equal(out.data, x[:, :, ::2, :])

    def test_conv2d_gradients(self):
        gradcheck.check(
            lambda x, w, b: ad.conv2d(x, w, b),
            [rand((2, 3, 5, 4), 22), rand((2, 3, 3, 3), 23), rand((2,), 24)],
            h=1e-4, tol=1e-5,
        )

    def test_conv2d_strided_gradients(self):
        gradcheck.check(
            lambda x, w: ad.conv2d(x, w, stride=(2, 1)),
            [rand((1, 2, 7, 3), 25), rand((2, 2, 3, 3), 26)],
            h=1e-4, tol=1e-5,
        )

    def test_conv1d_dilated_gradients(self):
        for dilation in (1, 2, 4):
            gradcheck.check(
                lambda x, w, b: ad.conv1d_dilated(x, w, b, dilation=dilation),
                [rand((2, 3, 10), 27), rand((4, 3, 3), 28), rand((4,), 29)],
                h=1e-4, tol=1e-5,
            )

    def test_transposed_conv_inverts_shape_map(self):
        # ceil(target / stride) == input length for every valid target
        x = ad.Tensor(rand((1, 2, 9, 3), 30))
        w = ad.Tensor(rand((2, 2, 3, 3), 31))
        for target in (17, 18):
            out = ad.transposed_conv2d(x, w, stride=2, target_len=target)
            assert out.shape == (1, 2, target, 3)
        with pytest.raises(ShapeError):
            ad.transposed_conv2d(x, w, stride=2, target_len=20)

    def test_transposed_conv_gradients(self):
        gradcheck.check(
            lambda x, w: ad.transposed_conv2d(x, w, stride=2, target_len=9),
            [rand((1, 2, 5, 3), 32), rand((2, 2, 3, 3), 33)],
            h=1e-4, tol=1e-5,
        )

    def test_zero_upsample_roundtrip(self):
        x = rand((1, 1, 5, 2), 34)
        up = ad.zero_upsample(ad.Tensor(x), stride=3, target_len=13, axis=2)
        down = ad.subsample(up, stride=3, axis=2)
        np.testing.assert_array_equal(down.data, x)

    def test_empty_output_rejected(self):
        with pytest.raises(ShapeError):
            ad.avg_pool(ad.Tensor(rand((1, 1, 0, 2), 35)), stride=2)


class TestGatedAndNorm:
    def test_gate_saturation(self):
        lin = rand((3, 4), 40)
        out = ad.gated(ad.Tensor(lin), ad.Tensor(np.full((3, 4), 500.0)))
        np.testing.assert_allclose(out.data, lin, rtol=1e-12)

    def test_gate_at_zero_halves(self):
        lin = rand((3, 4), 41)
        out = ad.gated(ad.Tensor(lin), ad.Tensor(np.zeros((3, 4))))
        np.testing.assert_allclose(out.data, lin / 2)

    def test_gated_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.gated(ad.Tensor(np.zeros((2, 2))), ad.Tensor(np.zeros((3, 2))))

    def test_gated_gradients(self):
        gradcheck.check(ad.gated, [rand((3, 4), 42), rand((3, 4), 43)])

    def test_weight_norm_unit_direction(self):
        v = np.zeros((2, 3))
        v[0, 0] = 1.0
        v[1, 1] = 1.0
        out = ad.weight_norm(ad.Tensor(v), ad.Tensor(np.ones(2)))
        np.testing.assert_allclose(out.data, v, atol=1e-12)

    def test_weight_norm_scale_invariance(self):
        v = rand((3, 4, 2), 44)
        g = rand((3,), 45, loc=1.0, scale=0.1)
        w1 = ad.weight_norm(ad.Tensor(v), ad.Tensor(g)).data
        w2 = ad.weight_norm(ad.Tensor(10.0 * v), ad.Tensor(g)).data
        np.testing.assert_allclose(w1, w2, rtol=1e-12)

    def test_weight_norm_zero_direction_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ad.weight_norm(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.ones(2)))

    def test_weight_norm_gradients(self):
        gradcheck.check(ad.weight_norm, [rand((3, 4), 46), rand((3,), 47)], h=1e-4, tol=1e-5)

    def test_reparameterize(self):
        mu = rand((4, 3), 48)
        sigma = np.abs(rand((4, 3), 49)) + 0.1
        eps = rand((4, 3), 50)
        z = ad.reparameterize(ad.Tensor(mu), ad.Tensor(sigma), ad.Tensor(eps))
        np.testing.assert_allclose(z.data, mu + sigma * eps)
        z0 = ad.reparameterize(ad.Tensor(mu), ad.Tensor(sigma), ad.Tensor(np.zeros((4, 3))))
        np.testing.assert_array_equal(z0.data, mu)
        zs = ad.reparameterize(ad.Tensor(mu), ad.Tensor(np.zeros((4, 3))), ad.Tensor(eps))
        np.testing.assert_array_equal(zs.data, mu)

    def test_reparameterize_gradients_skip_epsilon(self):
        mu = ad.Tensor(rand((2, 2), 51), requires_grad=True)
        sigma = ad.Tensor(np.abs(rand((2, 2), 52)) + 0.1, requires_grad=True)
        eps_arr = rand((2, 2), 53)
        eps = ad.Tensor(eps_arr, requires_grad=True)
        ad.tensor_sum(ad.reparameterize(mu, sigma, eps)).backward()
        np.testing.assert_array_equal(mu.grad, np.ones((2, 2)))
        np.testing.assert_allclose(sigma.grad, eps_arr)
        assert eps.grad is None  # constant by contract


class TestActivationsExamples:
    def test_leaky_relu_negative_slope(self):
        out = ad.leaky_relu(ad.Tensor(np.array(-1.0)), 0.01)
        assert out.item() == pytest.approx(-0.01)

    def test_atan2_quarter_turn(self):
        assert ad.atan2(ad.Tensor(np.array(1.0)), ad.Tensor(np.array(0.0))).item() == pytest.approx(np.pi / 2)

    def test_atan2_range_half_open(self):
        y = ad.Tensor(np.array([0.0, 1e-9, -1e-9]))
        x = ad.Tensor(np.array([-1.0, -1.0, -1.0]))
        out = ad.atan2(y, x).data
        assert np.all(out >= -np.pi) and np.all(out < np.pi)

    def test_atan2_origin_convention(self):
        y = ad.Tensor(np.array(0.0), requires_grad=True)
        x = ad.Tensor(np.array(0.0), requires_grad=True)
        out = ad.atan2(y, x)
        assert out.item() == 0.0
        out.backward()
        assert y.grad == 0.0 and x.grad == 0.0

    def test_softplus_at_zero(self):
        assert ad.softplus(ad.Tensor(np.array(0.0))).item() == pytest.approx(np.log(2))


def log_i0_series_oracle(x, tol=1e-15):
    """Independent power-series oracle: sum (x^2/4)^m / (m!)^2."""
    total, term, m = 1.0, 1.0, 0
    q = x * x / 4.0
    while True:
        m += 1
        term *= q / (m * m)
        total += term
        if term < tol * total or m > 500:
            break
    return float(np.log(total))


class TestLogBesselI0:
    def test_zero(self):
        assert ad.log_bessel_i0(ad.Tensor(np.array(0.0))).item() == 0.0

    def test_kappa_one_against_series_oracle(self):
        expected = log_i0_series_oracle(1.0)
        assert expected == pytest.approx(0.235914358507, abs=1e-12)
        assert ad.log_i0(np.array([1.0]))[0] == pytest.approx(expected, rel=1e-12)

    def test_gradient_at_zero(self):
        k = ad.Tensor(np.array(0.0), requires_grad=True)
        ad.log_bessel_i0(k).backward()
        assert k.grad == 0.0  # I1(0) = 0

    def test_series_vs_asymptotic_cross_check_at_50(self):
        series = log_i0_series_oracle(50.0)
        ours = float(ad.log_i0(np.array([50.0]))[0])
        assert abs(ours - series) / series < 1e-10

    def test_matches_series_oracle_across_range(self):
        for k in np.concatenate([np.linspace(0.01, 14.99, 40), np.linspace(15.0, 100.0, 40)]):
            expected = log_i0_series_oracle(float(k))
            assert abs(float(ad.log_i0(np.array([k]))[0]) - expected) <= 1e-10 * max(expected, 1.0)

    def test_negative_rejected(self):
        with pytest.raises(NumericsError):
            ad.log_bessel_i0(ad.Tensor(np.array(-0.5)))

    def test_monotone_and_convex_on_grid(self):
        grid = np.arange(0.0, 100.0 + 1e-9, 0.1)
        values = ad.log_i0(grid)
        diffs = np.diff(values)
        assert np.all(diffs > 0)          # strictly increasing
        assert np.all(np.diff(diffs) > -1e-12)  # convex

    def test_ratio_bounded(self):
        grid = np.concatenate([np.arange(0.0, 100.0, 0.1), [1e3, 1e4, 1e6]])
        r = ad.i1_over_i0(grid)
        assert np.all(r >= 0.0) and np.all(r < 1.0)
        assert np.all(np.isfinite(ad.log_i0(grid)))

    def test_stable_at_large_kappa(self):
        big = ad.log_i0(np.array([1e4]))[0]
        # asymptotic leading terms dominate: x - 0.5 ln(2 pi x)
        expected = 1e4 - 0.5 * np.log(2 * np.pi * 1e4)
        assert big == pytest.approx(expected, rel=1e-6)

    def test_gradient_matches_finite_differences(self):
        x = np.array([0.5, 3.0, 14.9, 15.1, 60.0])
        gradcheck.check(lambda t: ad.log_bessel_i0(t), [x], h=1e-4, tol=1e-6)


class TestDeterminismAndStore:
    def test_forward_backward_bit_identical(self):
        def run():
            x = ad.Tensor(rand((6, 5), 60), requires_grad=True)
            w = ad.Tensor(rand((5, 4), 61), requires_grad=True)
            out = ad.tanh(ad.matmul(x, w))
            ad.tensor_sum(ad.square(out)).backward()
            return out.data.copy(), x.grad.copy(), w.grad.copy()

        a = run()
        b = run()
        for left, right in zip(a, b):
            np.testing.assert_array_equal(left, right)

    def test_no_grad_suppresses_tape(self):
        x = ad.Tensor(rand((3,), 62), requires_grad=True)
        with ad.no_grad():
            out = ad.square(x)
        assert not out.requires_grad and out._backward is None

    def test_param_store_unique_names(self):
        store = ad.ParamStore()
        store.create("a/b", np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            store.create("a/b", np.zeros(3))

    def test_container_roundtrip(self, tmp_path):
        arrays = {
            "encoder/w": rand((3, 4), 63).astype(np.float32),
            "decoder/b": rand((7,), 64).astype(np.float32),
            "scalar": np.array(2.5, dtype=np.float32),
        }
        meta = {"kind": "test", "nested": {"x": 1}}
        path = tmp_path / "params.bin"
        ad.save_container(path, arrays, meta)
        loaded, meta2 = ad.load_container(path)
        assert meta2 == meta
        assert set(loaded) == set(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
            assert loaded[name].dtype == np.float32
