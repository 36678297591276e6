"""Layer-function checks: activations, dense, dropout stats, batchnorm moments."""

import math

import numpy as np
import pytest

from fundusdl.layers import (
    BN_EPS,
    BN_MOMENTUM,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    batchnorm2d_backward,
    batchnorm2d_forward,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    relu,
    relu_backward,
    softmax,
    softmax_backward,
)

# independent oracle for softmax rows


def softmax_rows_oracle(z):
    out = np.zeros_like(z, dtype=float)
    for i in range(z.shape[0]):
        exps = [math.exp(v) for v in z[i]]
        s = sum(exps)
        out[i] = [e / s for e in exps]
    return out


class TestReLU:
    def test_values(self):
        z = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
        assert np.array_equal(relu(z), [0.0, 0.0, 0.0, 0.5, 3.0])

    def test_subgradient_zero_at_kink(self):
        z = np.array([-1.0, 0.0, 2.0])
        g = relu_backward(np.ones(3), z)
        assert np.array_equal(g, [0.0, 0.0, 1.0])

    def test_backward_masks_upstream(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((4, 5))
        up = rng.standard_normal((4, 5))
        got = relu_backward(up, z)
        assert np.array_equal(got, up * (z > 0))

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal(100)
        assert np.array_equal(relu(relu(z)), relu(z))


class TestSoftmax:
    def test_reference_row(self):
        p = softmax(np.array([[0.1, 0.2, 0.3, 0.4]]))
        want = np.array([[0.2138, 0.2363, 0.2612, 0.2887]])
        assert np.abs(p - want).max() < 1e-4

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((6, 5))
        assert np.abs(softmax(z) - softmax_rows_oracle(z)).max() < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((50, 7)) * 10
        assert np.abs(softmax(z).sum(axis=1) - 1.0).max() < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((8, 5))
        shift = rng.standard_normal((8, 1)) * 100
        assert np.abs(softmax(z + shift) - softmax(z)).max() < 1e-12

    def test_large_logits_stable(self):
        p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
        assert np.all(np.isfinite(p))
        assert abs(p[0, 0] - 0.5) < 1e-12

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((3, 5))
        up = rng.standard_normal((3, 5))
        p = softmax(z)
        got = softmax_backward(up, p)
        h = 1e-6
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            orig = z[idx]
            z[idx] = orig + h
            lp = float((softmax(z) * up).sum())
            z[idx] = orig - h
            lm = float((softmax(z) * up).sum())
            z[idx] = orig
            fd[idx] = (lp - lm) / (2 * h)
        assert np.abs(got - fd).max() < 1e-8


class TestDense:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal(5)
        got = dense_forward(x, w, b)
        want = np.zeros((4, 5))
        for i in range(4):
            for u in range(5):
                want[i, u] = sum(x[i, m] * w[m, u] for m in range(3)) + b[u]
        assert np.abs(got - want).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dense_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        up = rng.standard_normal((3, 2))
        dx, dw, db = dense_backward(up, x, w)
        h = 1e-6
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for idx in range(arr.size):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = float((dense_forward(x, w, b) * up).sum())
                flat[idx] = orig - h
                lm = float((dense_forward(x, w, b) * up).sum())
                flat[idx] = orig
                assert abs((lp - lm) / (2 * h) - gflat[idx]) < 1e-6


class TestDropout:
    def test_eval_identity_and_no_mask(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((5, 5))
        y, mask = dropout(x, 0.5, training=False)
        assert mask is None
        assert np.array_equal(y, x)

    def test_rate_zero_identity(self):
        x = np.ones((3, 3))
        y, mask = dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        assert mask is None
        assert np.array_equal(y, x)

    def test_kept_units_scaled(self):
        rng = np.random.default_rng(9)
        x = np.ones((10, 10))
        y, mask = dropout(x, 0.25, training=True, rng=rng)
        kept = y[mask]
        assert np.allclose(kept, 1.0 / 0.75, atol=0)
        assert np.all(y[~mask] == 0.0)

    def test_mean_preserved_large_sample(self):
        # 1e5 units: sample mean of the output should sit within 2% of the
        # input mean (inverted scaling makes dropout unbiased)
        rng = np.random.default_rng(10)
        x = np.ones(100_000)
        y, _ = dropout(x, 0.5, training=True, rng=rng)
        assert 0.98 <= y.mean() <= 1.02

    def test_expectation_over_many_masks(self):
        x = np.array([2.0, -1.5, 0.75, 4.0])
        rng = np.random.default_rng(3000)
        total = np.zeros_like(x)
        trials = 40_000
        for _ in range(trials):
            y, _ = dropout(x, 0.5, training=True, rng=rng)
            total += y
        avg = total / trials
        assert np.abs(avg / x - 1.0).max() < 0.02

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, training=True, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            dropout(np.ones(3), -0.1, training=False)

    def test_missing_rng_rejected(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 0.5, training=True)

    def test_backward_uses_same_mask(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((6, 6))
        up = rng.standard_normal((6, 6))
        y, mask = dropout(x, 0.4, training=True, rng=rng)
        dx = dropout_backward(up, mask, 0.4)
        assert np.array_equal(dx, up * mask / 0.6)
        assert np.array_equal(dropout_backward(up, None, 0.4), up)


class TestBatchNorm:
    def test_train_standardises(self):
        # large per-channel variance keeps the eps term below the tolerance
        rng = np.random.default_rng(12)
        x = rng.standard_normal((8, 3, 6, 6)) * 10 + 5
        gamma, beta = np.ones(3), np.zeros(3)
        y, _, _, _ = batchnorm2d_forward(
            x, gamma, beta, np.zeros(3), np.ones(3), training=True
        )
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(y.std(axis=(0, 2, 3)) - 1.0).max() < 1e-6

    def test_affine_parameters_applied(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((4, 2, 3, 3)) * 7
        gamma = np.array([2.0, 0.5])
        beta = np.array([-1.0, 3.0])
        y, _, _, _ = batchnorm2d_forward(
            x, gamma, beta, np.zeros(2), np.ones(2), training=True
        )
        assert np.abs(y.mean(axis=(0, 2, 3)) - beta).max() < 1e-6

    def test_running_moment_update_loop_oracle(self):
        # feed a sequence of batches and track the running moments by hand
        rng = np.random.default_rng(14)
        gamma, beta = np.ones(2), np.zeros(2)
        r_mean, r_var = np.zeros(2), np.ones(2)
        want_mean, want_var = np.zeros(2), np.ones(2)
        for _ in range(10):
            x = rng.standard_normal((4, 2, 5, 5)) * rng.uniform(0.5, 3)
            _, _, r_mean, r_var = batchnorm2d_forward(
                x, gamma, beta, r_mean, r_var, training=True
            )
            bm = x.mean(axis=(0, 2, 3))
            bv = x.var(axis=(0, 2, 3))
            want_mean = BN_MOMENTUM * want_mean + (1 - BN_MOMENTUM) * bm
            want_var = BN_MOMENTUM * want_var + (1 - BN_MOMENTUM) * bv
        assert np.abs(r_mean - want_mean).max() < 1e-10
        assert np.abs(r_var - want_var).max() < 1e-10

    def test_eval_uses_running_moments(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((3, 2, 4, 4))
        r_mean = np.array([1.0, -2.0])
        r_var = np.array([4.0, 9.0])
        gamma, beta = np.ones(2), np.zeros(2)
        y, _, new_mean, new_var = batchnorm2d_forward(
            x, gamma, beta, r_mean, r_var, training=False
        )
        want = (x - r_mean[None, :, None, None]) / np.sqrt(
            r_var[None, :, None, None] + BN_EPS
        )
        assert np.abs(y - want).max() < 1e-12
        assert np.array_equal(new_mean, r_mean)
        assert np.array_equal(new_var, r_var)

    def test_train_backward_matches_finite_differences(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((3, 2, 4, 4)) * 2
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.standard_normal(2)
        up = rng.standard_normal(x.shape)

        def loss():
            y, cache, _, _ = batchnorm2d_forward(
                x, gamma, beta, np.zeros(2), np.ones(2), training=True
            )
            return float((y * up).sum()), cache

        _, cache = loss()
        dx, dgamma, dbeta = batchnorm2d_backward(up, cache)
        h = 1e-6
        for arr, grad in ((x, dx), (gamma, dgamma), (beta, dbeta)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for idx in rng.choice(arr.size, size=min(12, arr.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp, _ = loss()
                flat[idx] = orig - h
                lm, _ = loss()
                flat[idx] = orig
                assert abs((lp - lm) / (2 * h) - gflat[idx]) < 5e-5

    def test_eval_backward_is_linear_map(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((2, 2, 3, 3))
        gamma = np.array([2.0, 0.5])
        r_var = np.array([4.0, 1.0])
        _, cache, _, _ = batchnorm2d_forward(
            x, gamma, np.zeros(2), np.zeros(2), r_var, training=False
        )
        up = rng.standard_normal(x.shape)
        dx, _, _ = batchnorm2d_backward(up, cache)
        inv = 1.0 / np.sqrt(r_var + BN_EPS)
        want = up * (gamma * inv)[None, :, None, None]
        assert np.abs(dx - want).max() < 1e-12


class TestLayerObjects:
    def test_conv_param_count(self):
        layer = Conv2D("c", c_in=3, c_out=8, kernel=3, padding=1)
        layer.init_params(np.random.default_rng(0))
        # 8 * 3 * 3 * 3 weights + 8 biases
        assert layer.param_count() == 224

    def test_conv_he_init_bounds(self):
        layer = Conv2D("c", c_in=4, c_out=16, kernel=3, padding=1)
        layer.init_params(np.random.default_rng(1))
        bound = math.sqrt(6.0 / (4 * 3 * 3))
        assert np.abs(layer.w.data).max() <= bound
        assert np.all(layer.b.data == 0.0)

    def test_batchnorm_buffers_registered(self):
        layer = BatchNorm2D("bn", channels=4)
        names = [b.name for b in layer.buffers()]
        assert any(n.endswith("running_mean") for n in names)
        assert any(n.endswith("running_var") for n in names)

    def test_dense_layer_roundtrip(self):
        layer = Dense("d", in_features=4, units=3)
        layer.init_params(np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal((2, 4))
        y = layer.forward(x)
        assert y.shape == (2, 3)
        dx = layer.backward(np.ones_like(y))
        assert dx.shape == x.shape

    def test_dropout_layer_eval_identity(self):
        layer = Dropout("do", rate=0.5)
        x = np.random.default_rng(4).standard_normal((3, 3))
        assert np.array_equal(layer.forward(x, training=False), x)

    def test_gap_layer_flattens(self):
        layer = GlobalAvgPool("gap")
        x = np.random.default_rng(5).standard_normal((2, 6, 4, 4))
        y = layer.forward(x)
        assert y.shape == (2, 6)
        assert np.abs(y - x.mean(axis=(2, 3))).max() < 1e-12
