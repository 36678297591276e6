"""Numeric gradient verification by central finite differences.

grad_check probes coordinates of the supplied arrays, compares the analytic
gradient against (f(x+h) - f(x-h)) / 2h, and returns the worst relative
error |a - n| / max(1e-8, |a| + |n|).  The preset runners bundle checks for
every backward rule in the package and for the tiny full models.
"""

from __future__ import annotations

import numpy as np

from . import layers, losses, tensor_ops

STEP = 1e-5
THRESHOLD = 1e-4


class GradCheckError(RuntimeError):
    pass


def grad_check(fn, arrays, step: float = STEP, limit: int = 0, rng=None) -> float:
    """Worst relative error between analytic and numeric gradients.

    fn(arrays, want_grad) must return (loss, grads) with grads matching the
    arrays' shapes when want_grad is true, and (loss, None) otherwise.  The
    arrays are perturbed in place and restored bit-exactly.  With limit > 0,
    at most that many coordinates per array are probed (sampled via rng).
    """
    loss0, grads = fn(arrays, True)
    if not np.isfinite(loss0):
        raise GradCheckError("non-finite loss at the unperturbed point")
    if grads is None or len(grads) != len(arrays):
        raise ValueError("fn must return one gradient per input array")
    worst = 0.0
    for ai, (arr, g) in enumerate(zip(arrays, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != arr.shape:
            raise ValueError(f"gradient {ai} shape {g.shape} != array shape {arr.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise GradCheckError(f"non-finite analytic gradient in array {ai} at flat index {bad}")
        n = arr.size
        if limit and n > limit:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = np.sort(rng.choice(n, size=limit, replace=False))
        else:
            idxs = np.arange(n)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = fn(arrays, False)
            flat[idx] = orig - step
            lm, _ = fn(arrays, False)
            flat[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(
                    f"non-finite loss while probing array {ai} at flat index {int(idx)}"
                )
            numeric = (lp - lm) / (2.0 * step)
            analytic = gflat[idx]
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# per-operation checks: scalarise each op through a fixed weighted sum so the
# upstream gradient is just the weight tensor.


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    # Keep probe points clear of the relu kink so h=1e-5 never crosses it.
    return x + np.sign(x) * margin


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng.standard_normal((2, 3, 4, 4)))
    w = rng.standard_normal(x.shape)

    def fn(arrays, want_grad):
        (x_,) = arrays
        out = layers.relu(x_)
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        return loss, [layers.relu_backward(w, x_)]

    return grad_check(fn, [x])


def check_softmax(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal(x.shape)

    def fn(arrays, want_grad):
        (x_,) = arrays
        p = layers.softmax(x_)
        loss = float((p * w).sum())
        if not want_grad:
            return loss, None
        return loss, [layers.softmax_backward(w, p)]

    return grad_check(fn, [x])


def check_dense(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 6))
    wt = rng.standard_normal((6, 3))
    b = rng.standard_normal(3)
    w = rng.standard_normal((4, 3))

    def fn(arrays, want_grad):
        x_, wt_, b_ = arrays
        out = layers.dense_forward(x_, wt_, b_)
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        dx, dw, db = layers.dense_backward(w, x_, wt_)
        return loss, [dx, dw, db]

    return grad_check(fn, [x, wt, b])


def check_dropout(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 8))
    w = rng.standard_normal(x.shape)
    mask_seed = seed + 101

    def fn(arrays, want_grad):
        (x_,) = arrays
        out, mask = layers.dropout(x_, 0.5, True, np.random.default_rng(mask_seed))
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        return loss, [layers.dropout_backward(w, mask, 0.5)]

    return grad_check(fn, [x])


def check_batchnorm2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3, 5, 5))
    gamma = 1.0 + 0.1 * rng.standard_normal(3)
    beta = 0.1 * rng.standard_normal(3)
    w = rng.standard_normal(x.shape)

    def fn(arrays, want_grad):
        x_, g_, b_ = arrays
        out, cache, _, _ = layers.batchnorm2d_forward(
            x_, g_, b_, np.zeros(3), np.ones(3), training=True
        )
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        dx, dg, db = layers.batchnorm2d_backward(w, cache)
        return loss, [dx, dg, db]

    return grad_check(fn, [x, gamma, beta])


def check_conv2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    spec = tensor_ops.ConvSpec(kernel=(3, 3), stride=2, padding=1)
    x = rng.standard_normal((2, 3, 6, 6))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out0 = tensor_ops.conv2d(x, k, b, spec)
    w = rng.standard_normal(out0.shape)

    def fn(arrays, want_grad):
        x_, k_, b_ = arrays
        out = tensor_ops.conv2d(x_, k_, b_, spec)
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        dx, dk, db = tensor_ops.conv2d_backward(w, x_, k_, spec)
        return loss, [dx, dk, db]

    return grad_check(fn, [x, k, b])


def check_avg_pool2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 5, 5))  # odd extents exercise edge replication
    w = rng.standard_normal(tensor_ops.avg_pool2d(x).shape)

    def fn(arrays, want_grad):
        (x_,) = arrays
        out = tensor_ops.avg_pool2d(x_)
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        return loss, [tensor_ops.avg_pool2d_backward(w, x_.shape)]

    return grad_check(fn, [x])


def check_global_avg_pool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 3, 3))
    w = rng.standard_normal((2, 4, 1, 1))

    def fn(arrays, want_grad):
        (x_,) = arrays
        out = tensor_ops.global_avg_pool(x_)
        loss = float((out * w).sum())
        if not want_grad:
            return loss, None
        return loss, [tensor_ops.global_avg_pool_backward(w, x_.shape)]

    return grad_check(fn, [x])


def check_bce(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((3, 5))
    yhat = layers.softmax(logits)  # comfortably inside the clip interval
    y = np.zeros((3, 5))
    y[np.arange(3), rng.integers(0, 5, 3)] = 1.0

    def fn(arrays, want_grad):
        (yhat_,) = arrays
        out = losses.bce(y, yhat_)
        if not want_grad:
            return out.value, None
        return out.value, [out.gradient]

    return grad_check(fn, [yhat])


OP_CHECKS = {
    "relu": check_relu,
    "softmax": check_softmax,
    "dense": check_dense,
    "dropout": check_dropout,
    "batchnorm2d": check_batchnorm2d,
    "conv2d": check_conv2d,
    "avg_pool2d": check_avg_pool2d,
    "global_avg_pool": check_global_avg_pool,
    "bce": check_bce,
}


def check_model(arch: str, seed: int) -> float:
    """Full-model check: bce-over-softmax loss on a tiny preset, 8x8 input.

    Dropout is pinned to the identity (rate 0) so the loss surface is
    deterministic; batchnorm runs in training mode.  The objective is scaled
    by 0.01 to condition the comparison: some coordinates (conv biases
    absorbed by the following batchnorm) have exactly zero gradient, where
    the finite difference is pure rounding noise of the loss (about
    |loss| * eps / step); the scale keeps that noise below the 1e-8
    denominator floor of the error formula.  A genuinely wrong backward rule
    still fails scale-invariantly.
    """
    from .models import build_model

    scale = 0.01
    rng = np.random.default_rng(seed)
    model = build_model(arch, scale="tiny", input_shape=(3, 8, 8), dropout_rate=0.0)
    model.init_params(np.random.default_rng(seed + 1))
    x = rng.standard_normal((2, 3, 8, 8))
    y = np.zeros((2, 5))
    y[np.arange(2), rng.integers(0, 5, 2)] = 1.0
    arrays = [p.data for p in model.params()] + [x]

    def fn(arrays_, want_grad):
        x_ = arrays_[-1]
        p = model.forward(x_, training=True)
        out = losses.bce(y, p)
        if not want_grad:
            return scale * out.value, None
        dx = model.backward(out.gradient)
        return scale * out.value, [scale * q.grad for q in model.params()] + [scale * dx]

    return grad_check(fn, arrays, limit=150, rng=np.random.default_rng(seed + 7))


PRESETS = ("ops", "tiny-densenet", "tiny-resnet")


def run_preset(preset: str, seed: int = 0, inject_fault: bool = False) -> list[tuple[str, float]]:
    """Run a named check suite; returns (component, worst relative error) pairs.

    inject_fault doubles the analytic relu gradient before comparison, a
    negative control that must push the error to about 1/3.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if inject_fault:
        original = layers.relu_backward
        layers.relu_backward = lambda grad, z: 2.0 * original(grad, z)
        try:
            if preset == "ops":
                return [("relu", check_relu(seed))]
            arch = "densenet-mini" if preset == "tiny-densenet" else "resnet-mini"
            return [(arch, check_model(arch, seed))]
        finally:
            layers.relu_backward = original
    if preset == "ops":
        return [(name, fn(seed)) for name, fn in OP_CHECKS.items()]
    arch = "densenet-mini" if preset == "tiny-densenet" else "resnet-mini"
    return [(arch, check_model(arch, seed))]
