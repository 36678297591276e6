"""Finite-difference gradient checker: exactness, sensitivity, presets."""

import numpy as np
import pytest

from fundusdl.gradcheck import (
    OP_CHECKS,
    PRESETS,
    THRESHOLD,
    GradCheckError,
    grad_check,
    run_preset,
)
from fundusdl.layers import relu, relu_backward
from fundusdl.losses import bce
from fundusdl.tensor_ops import ConvSpec, conv2d, conv2d_backward


class TestGradCheck:
    def test_linear_function_is_near_exact(self):
        # central differences are exact for affine maps up to rounding
        rng = np.random.default_rng(50)
        c = rng.standard_normal(10)
        x = rng.standard_normal(10)

        def fn(arrays, want_grad):
            (x_,) = arrays
            loss = float(c @ x_)
            return loss, ([c.copy()] if want_grad else None)

        assert grad_check(fn, [x]) < 1e-9

    def test_quadratic_function(self):
        rng = np.random.default_rng(51)
        x = rng.standard_normal(8) + 2.0

        def fn(arrays, want_grad):
            (x_,) = arrays
            loss = float((x_**2).sum())
            return loss, ([2.0 * x_] if want_grad else None)

        assert grad_check(fn, [x]) < 1e-7

    def test_micro_net_conv_relu_bce(self):
        rng = np.random.default_rng(52)
        spec = ConvSpec((3, 3), 1, 1)
        x = rng.standard_normal((2, 2, 4, 4))
        k = rng.standard_normal((3, 2, 3, 3)) * 0.5
        b = rng.standard_normal(3) * 0.1
        y = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])

        def fn(arrays, want_grad):
            x_, k_, b_ = arrays
            z = conv2d(x_, k_, b_, spec)
            a = relu(z)
            pooled = a.mean(axis=(2, 3))
            p = 1.0 / (1.0 + np.exp(-pooled))
            out = bce(y, p)
            if not want_grad:
                return out.value, None
            dp = out.gradient
            dpooled = dp * p * (1.0 - p)
            da = np.broadcast_to(
                dpooled[:, :, None, None] / (a.shape[2] * a.shape[3]), a.shape
            )
            dz = relu_backward(da, z)
            dx, dk, db = conv2d_backward(dz, x_, k_, spec)
            return out.value, [dx, dk, db]

        assert grad_check(fn, [x, k, b]) < 1e-4

    def test_detects_corrupted_gradient(self):
        # doubling one of three gradients drives the relative error to ~1/3
        rng = np.random.default_rng(53)
        c = rng.standard_normal(5) + 1.0
        x = rng.standard_normal(5)

        def fn(arrays, want_grad):
            (x_,) = arrays
            return float(c @ x_), ([2.0 * c] if want_grad else None)

        err = grad_check(fn, [x])
        assert abs(err - 1.0 / 3.0) < 1e-6

    def test_perturbations_are_restored(self):
        x = np.array([1.0, 2.0, 3.0])
        snapshot = x.copy()

        def fn(arrays, want_grad):
            (x_,) = arrays
            return float(x_.sum()), ([np.ones(3)] if want_grad else None)

        grad_check(fn, [x])
        assert np.array_equal(x, snapshot)

    def test_non_finite_loss_reported(self):
        x = np.array([0.0])

        def fn(arrays, want_grad):
            return float("nan"), ([np.zeros(1)] if want_grad else None)

        with pytest.raises(GradCheckError):
            grad_check(fn, [x])

    def test_limit_samples_subset(self):
        calls = []
        x = np.zeros(1000)

        def fn(arrays, want_grad):
            calls.append(1)
            (x_,) = arrays
            return float(x_.sum()), ([np.ones(1000)] if want_grad else None)

        err = grad_check(fn, [x], limit=10, rng=np.random.default_rng(0))
        assert err < 1e-9
        # one gradient call plus two loss calls per sampled coordinate
        assert len(calls) <= 1 + 2 * 10


class TestOpChecks:
    @pytest.mark.parametrize("name", sorted(OP_CHECKS))
    def test_each_primitive_passes(self, name):
        err = OP_CHECKS[name](seed=123)
        assert err < THRESHOLD, f"{name} rel err {err:.3e}"


class TestPresets:
    def test_preset_names(self):
        assert PRESETS == ("ops", "tiny-densenet", "tiny-resnet")

    def test_ops_preset_all_pass(self):
        results = run_preset("ops", seed=7)
        assert len(results) == len(OP_CHECKS)
        for name, err in results:
            assert err < THRESHOLD, f"{name} rel err {err:.3e}"

    def test_model_presets_pass(self):
        for preset in ("tiny-densenet", "tiny-resnet"):
            results = run_preset(preset, seed=7)
            for name, err in results:
                assert err < THRESHOLD, f"{name} rel err {err:.3e}"

    def test_injected_fault_is_detected(self):
        results = run_preset("ops", seed=7, inject_fault=True)
        worst = max(err for _, err in results)
        assert worst > THRESHOLD

    def test_injected_fault_in_model_preset(self):
        results = run_preset("tiny-densenet", seed=7, inject_fault=True)
        worst = max(err for _, err in results)
        assert worst > THRESHOLD

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            run_preset("huge", seed=0)
