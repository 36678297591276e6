"""Adam optimizer: bias-corrected first step, loop oracle, rejection paths."""

import math

import numpy as np
import pytest

from fundusdl.optim import AdamState, adam_step


def adam_scalar_oracle(g_seq, lr=1e-4, b1=0.9, b2=0.999, eps=1e-7, p0=0.0):
    """Scalar Adam evolved step by step with plain Python floats."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
    return p


class TestAdamStep:
    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState()
        adam_step([p], [np.zeros(3)], state)
        assert np.array_equal(p, [1.0, -2.0, 3.0])
        assert state.step_count == 1

    def test_first_step_magnitude(self):
        # with any constant gradient, bias correction makes the first update
        # exactly -lr * sign(g) / (1 + eps)
        p = np.zeros(1)
        adam_step([p], [np.array([0.5])], AdamState())
        want = -1e-4 / (1.0 + 1e-7)
        assert abs(p[0] - want) < 1e-9

    def test_first_step_sign_follows_gradient(self):
        p = np.zeros(2)
        adam_step([p], [np.array([3.0, -3.0])], AdamState())
        assert p[0] < 0 < p[1]
        assert abs(p[0] + p[1]) < 1e-18

    def test_hundred_steps_match_scalar_oracle(self):
        rng = np.random.default_rng(40)
        g_seq = rng.standard_normal(100)
        p = np.array([0.7])
        state = AdamState()
        for g in g_seq:
            adam_step([p], [np.array([g])], state)
        want = adam_scalar_oracle(g_seq, p0=0.7)
        assert abs(p[0] - want) < 1e-12

    def test_constant_gradient_travels_about_lr_per_step(self):
        # steady gradient => mhat/sqrt(vhat) ~ 1, so 100 steps move ~ -100*lr
        p = np.zeros(1)
        state = AdamState()
        for _ in range(100):
            adam_step([p], [np.array([2.0])], state)
        assert abs(p[0] - (-100 * 1e-4)) < 0.02 * 100 * 1e-4

    def test_step_size_is_scale_free(self):
        # Adam normalises by gradient magnitude: constant gradients of very
        # different scales produce nearly identical trajectories
        finals = []
        for scale in (1e-3, 1.0, 1e3):
            p = np.zeros(1)
            state = AdamState()
            for _ in range(50):
                adam_step([p], [np.array([scale])], state)
            finals.append(p[0])
        assert abs(finals[0] - finals[1]) < 1e-6
        assert abs(finals[1] - finals[2]) < 1e-6

    def test_multiple_tensors_have_independent_moments(self):
        a, b = np.zeros(2), np.zeros(3)
        state = AdamState()
        adam_step([a, b], [np.ones(2), np.zeros(3)], state)
        assert np.all(a != 0.0)
        assert np.all(b == 0.0)
        assert len(state.m) == 2
        assert state.m[0].shape == (2,)
        assert state.m[1].shape == (3,)

    def test_updates_in_place(self):
        p = np.zeros(4)
        alias = p
        adam_step([p], [np.ones(4)], AdamState())
        assert alias is p
        assert np.all(alias != 0.0)


class TestAdamRejections:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2)], [np.zeros(2), np.zeros(2)], AdamState())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())

    def test_non_finite_gradient_named_by_index(self):
        g = np.array([0.0, np.nan, 0.0])
        with pytest.raises(FloatingPointError, match="flat index 1"):
            adam_step([np.zeros(3)], [g], AdamState())

    def test_infinite_gradient_rejected(self):
        with pytest.raises(FloatingPointError):
            adam_step([np.zeros(1)], [np.array([np.inf])], AdamState())

    def test_rejection_leaves_parameter_untouched(self):
        p = np.array([1.0, 2.0])
        state = AdamState()
        with pytest.raises(FloatingPointError):
            adam_step([p], [np.array([np.nan, 0.0])], state)
        assert np.array_equal(p, [1.0, 2.0])
        assert state.step_count == 0

    def test_state_reuse_across_different_list_rejected(self):
        state = AdamState()
        adam_step([np.zeros(2)], [np.ones(2)], state)
        with pytest.raises(ValueError):
            adam_step([np.zeros(2), np.zeros(2)], [np.ones(2), np.ones(2)], state)
