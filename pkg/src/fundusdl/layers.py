"""Differentiable layer primitives with hand-written backward rules.

Two surfaces: pure functions (relu, softmax, dense_forward, ...) for direct
numeric checks, and stateful Layer objects built on them that cache whatever
their backward pass needs.  A layer instance is applied once per step, so
backward() overwrites parameter gradients rather than accumulating.
"""

from __future__ import annotations

import numpy as np

from .tensor_ops import as_tensor4

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# functional forms


def relu(z: np.ndarray) -> np.ndarray:
    """max(0, z); the subgradient at exactly 0 is taken as 0."""
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def relu_backward(grad: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(z) > 0, grad, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(grad: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Jacobian-vector product: dz_i = p_i * (g_i - sum_j g_j p_j)
    inner = (grad * p).sum(axis=-1, keepdims=True)
    return p * (grad - inner)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map on feature rows: (n, m) @ (m, u) + (u,)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: x {x.shape} vs w {w.shape}")
    return x @ w + b


def dense_backward(
    grad: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx = grad @ w.T
    dw = x.T @ grad
    db = grad.sum(axis=0)
    return dx, dw, db


def dropout(
    x: np.ndarray,
    rate: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: kept units are scaled by 1/(1-rate) at train time.

    Returns (output, mask); the mask is None in eval mode (identity) and when
    rate == 0.  Expected value of the output equals the input.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(grad: np.ndarray, mask: np.ndarray | None, rate: float) -> np.ndarray:
    if mask is None:
        return np.asarray(grad, dtype=np.float64)
    return grad * mask / (1.0 - rate)


def batchnorm2d_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> tuple[np.ndarray, tuple, np.ndarray, np.ndarray]:
    """Per-channel batch normalisation over the (n, h, w) axes.

    Training mode standardises with batch moments and returns running moments
    updated as r <- momentum * r + (1 - momentum) * batch.  Eval mode uses
    the running moments unchanged.  Returns (y, cache, new_mean, new_var).
    """
    x = as_tensor4(x)
    g = gamma[None, :, None, None]
    b = beta[None, :, None, None]
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
        cache = (xhat, inv, gamma, True)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[None, :, None, None]) * inv[None, :, None, None]
        new_mean, new_var = running_mean, running_var
        cache = (xhat, inv, gamma, False)
    return g * xhat + b, cache, new_mean, new_var


def batchnorm2d_backward(
    grad: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of batchnorm2d_forward w.r.t. x, gamma, beta."""
    xhat, inv, gamma, trained = cache
    dgamma = (grad * xhat).sum(axis=(0, 2, 3))
    dbeta = grad.sum(axis=(0, 2, 3))
    dxhat = grad * gamma[None, :, None, None]
    if not trained:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    # Training mode: the batch moments depend on x, so fold their terms in.
    n, _, h, w = grad.shape
    m = n * h * w
    sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = (inv[None, :, None, None] / m) * (
        m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# layer objects


class Param:
    """A named trainable array plus the gradient of the last backward pass."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None


class Layer:
    def __init__(self, name: str):
        self.name = name
        self.out_shape: tuple | None = None  # (c, h, w) or (features,), set by builders

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> list[Param]:
        return []

    def leaves(self) -> list["Layer"]:
        return [self]

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2D(Layer):
    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel: int = 3,
        stride: int = 1,
        padding: int = 1,
    ):
        from .tensor_ops import ConvSpec

        super().__init__(name)
        self.spec = ConvSpec(kernel=(kernel, kernel), stride=stride, padding=padding)
        self.w = Param(f"{name}.w", np.zeros((c_out, c_in, kernel, kernel)))
        self.b = Param(f"{name}.b", np.zeros(c_out))
        self._x = None

    def forward(self, x, training=False, rng=None):
        from .tensor_ops import conv2d

        self._x = x
        return conv2d(x, self.w.data, self.b.data, self.spec)

    def backward(self, grad):
        from .tensor_ops import conv2d_backward

        dx, dk, db = conv2d_backward(grad, self._x, self.w.data, self.spec)
        self.w.grad = dk
        self.b.grad = db
        return dx

    def params(self):
        return [self.w, self.b]

    def init_params(self, rng):
        c_out, c_in, kh, kw = self.w.data.shape
        self.w.data = _he_uniform(rng, self.w.data.shape, c_in * kh * kw)
        self.b.data = np.zeros(c_out)


class BatchNorm2D(Layer):
    def __init__(self, name: str, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels))
        self.beta = Param(f"{name}.beta", np.zeros(channels))
        self.running_mean = Param(f"{name}.running_mean", np.zeros(channels))
        self.running_var = Param(f"{name}.running_var", np.ones(channels))
        self._cache = None

    def forward(self, x, training=False, rng=None):
        y, cache, new_mean, new_var = batchnorm2d_forward(
            x,
            self.gamma.data,
            self.beta.data,
            self.running_mean.data,
            self.running_var.data,
            training,
            self.momentum,
            self.eps,
        )
        if training:
            self.running_mean.data = new_mean
            self.running_var.data = new_var
        self._cache = cache
        return y

    def backward(self, grad):
        dx, dgamma, dbeta = batchnorm2d_backward(grad, self._cache)
        self.gamma.grad = dgamma
        self.beta.grad = dbeta
        return dx

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def init_params(self, rng):
        c = self.gamma.data.size
        self.gamma.data = np.ones(c)
        self.beta.data = np.zeros(c)
        self.running_mean.data = np.zeros(c)
        self.running_var.data = np.ones(c)


class ReLU(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._z = None

    def forward(self, x, training=False, rng=None):
        self._z = x
        return relu(x)

    def backward(self, grad):
        return relu_backward(grad, self._z)


class Dense(Layer):
    def __init__(self, name: str, in_features: int, units: int):
        super().__init__(name)
        self.w = Param(f"{name}.w", np.zeros((in_features, units)))
        self.b = Param(f"{name}.b", np.zeros(units))
        self._x = None

    def forward(self, x, training=False, rng=None):
        self._x = x
        return dense_forward(x, self.w.data, self.b.data)

    def backward(self, grad):
        dx, dw, db = dense_backward(grad, self._x, self.w.data)
        self.w.grad = dw
        self.b.grad = db
        return dx

    def params(self):
        return [self.w, self.b]

    def init_params(self, rng):
        m, u = self.w.data.shape
        self.w.data = _he_uniform(rng, (m, u), m)
        self.b.data = np.zeros(u)


class Dropout(Layer):
    def __init__(self, name: str, rate: float):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        y, mask = dropout(x, self.rate, training, rng)
        self._mask = mask
        return y

    def backward(self, grad):
        return dropout_backward(grad, self._mask, self.rate)


class GlobalAvgPool(Layer):
    """Spatial mean followed by a flatten to (n, c) feature rows."""

    def __init__(self, name: str):
        super().__init__(name)
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        from .tensor_ops import global_avg_pool

        self._in_shape = x.shape
        return global_avg_pool(x)[:, :, 0, 0]

    def backward(self, grad):
        from .tensor_ops import global_avg_pool_backward

        return global_avg_pool_backward(grad[:, :, None, None], self._in_shape)


class AvgPool2x2(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._in_shape = None

    def forward(self, x, training=False, rng=None):
        from .tensor_ops import avg_pool2d

        self._in_shape = x.shape
        return avg_pool2d(x)

    def backward(self, grad):
        from .tensor_ops import avg_pool2d_backward

        return avg_pool2d_backward(grad, self._in_shape)


class Softmax(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._p = None

    def forward(self, x, training=False, rng=None):
        self._p = softmax(x)
        return self._p

    def backward(self, grad):
        return softmax_backward(grad, self._p)
