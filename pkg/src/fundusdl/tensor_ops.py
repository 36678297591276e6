"""Rank-4 tensor primitives: convolution, pooling, and channel joins.

Every operation works on float64 numpy arrays laid out as (batch, channels,
height, width), treats its inputs as immutable, and is deterministic: the
same inputs always produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Window geometry that would produce an empty output plane."""


@dataclass(frozen=True)
class ConvSpec:
    """Kernel footprint (kh, kw), stride, and symmetric zero padding."""

    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        kh, kw = self.kernel
        if min(kh, kw) < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(
                f"bad conv spec: kernel={self.kernel} stride={self.stride} "
                f"padding={self.padding}"
            )


def as_tensor4(values) -> np.ndarray:
    """Coerce to a contiguous float64 (n, c, h, w) array."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected a rank-4 tensor, got rank {arr.ndim}")
    return arr


def out_size(w: int, k: int, p: int, s: int) -> int:
    """Output extent of a strided window sweep: floor((w - k + 2p) / s) + 1."""
    if w < 1 or k < 1 or s < 1 or p < 0:
        raise ValueError(f"bad geometry: input={w} kernel={k} padding={p} stride={s}")
    n = (w - k + 2 * p) // s + 1
    if n < 1:
        raise GeometryError(
            f"empty output: input={w} kernel={k} padding={p} stride={s}"
        )
    return n


def _window(xp: np.ndarray, j: int, t: int, s: int, oh: int, ow: int) -> np.ndarray:
    # The (j, t) tap of every output position, shape (n, c, oh, ow).
    return xp[:, :, j : j + s * (oh - 1) + 1 : s, t : t + s * (ow - 1) + 1 : s]


def conv2d(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray | None,
    spec: ConvSpec,
    flip_kernel: bool = False,
) -> np.ndarray:
    """Strided 2-D convolution in the CNN sense (cross-correlation).

    kernels has shape (c_out, c_in, kh, kw); bias has shape (c_out,) or is
    None for no bias.  With flip_kernel=True the kernel is mirrored in both
    spatial axes first, which yields the textbook convolution
    G[m, n] = sum_{j,k} h[j, k] f[m - j, n - k].
    """
    x = as_tensor4(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be rank 4, got rank {kernels.ndim}")
    n, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ValueError(f"channel mismatch: input has {c_in}, kernels expect {kc}")
    if (kh, kw) != tuple(spec.kernel):
        raise ValueError(f"kernel shape {(kh, kw)} != spec kernel {spec.kernel}")
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (c_out,):
            raise ValueError(f"bias shape {bias.shape} != ({c_out},)")
    s, p = spec.stride, spec.padding
    oh = out_size(h, kh, p, s)
    ow = out_size(w, kw, p, s)
    if flip_kernel:
        kernels = kernels[:, :, ::-1, ::-1]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((n, c_out, oh, ow))
    for j in range(kh):
        for t in range(kw):
            patch = _window(xp, j, t, s, oh, ow)
            # (n, oh, ow, c_out) contraction over the channel axis
            tap = np.tensordot(patch, kernels[:, :, j, t], axes=([1], [1]))
            out += tap.transpose(0, 3, 1, 2)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_backward(
    grad: np.ndarray,
    x: np.ndarray,
    kernels: np.ndarray,
    spec: ConvSpec,
    flip_kernel: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, kernels, and bias."""
    x = as_tensor4(x)
    grad = as_tensor4(grad)
    kernels = np.asarray(kernels, dtype=np.float64)
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = kernels.shape
    s, p = spec.stride, spec.padding
    oh, ow = grad.shape[2], grad.shape[3]
    if flip_kernel:
        kernels = kernels[:, :, ::-1, ::-1]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(kernels)
    for j in range(kh):
        for t in range(kw):
            patch = _window(xp, j, t, s, oh, ow)
            dk[:, :, j, t] = np.tensordot(grad, patch, axes=([0, 2, 3], [0, 2, 3]))
            # (n, oh, ow, c_in) spread back onto the strided input window
            spread = np.tensordot(grad, kernels[:, :, j, t], axes=([1], [0]))
            dxp[:, :, j : j + s * (oh - 1) + 1 : s, t : t + s * (ow - 1) + 1 : s] += (
                spread.transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
    if flip_kernel:
        dk = dk[:, :, ::-1, ::-1]
    db = grad.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), np.ascontiguousarray(dk), db


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial plane, returned as (n, c, 1, 1)."""
    x = as_tensor4(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, c, h, w = in_shape
    return np.broadcast_to(grad / (h * w), in_shape).copy()


def avg_pool2d(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling at stride 2; odd extents replicate the last row/col."""
    x = as_tensor4(x)
    _, _, h, w = x.shape
    if h % 2:
        x = np.concatenate([x, x[:, :, -1:, :]], axis=2)
    if w % 2:
        x = np.concatenate([x, x[:, :, :, -1:]], axis=3)
    return 0.25 * (
        x[:, :, 0::2, 0::2]
        + x[:, :, 1::2, 0::2]
        + x[:, :, 0::2, 1::2]
        + x[:, :, 1::2, 1::2]
    )


def avg_pool2d_backward(grad: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, c, h, w = in_shape
    dxp = 0.25 * np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
    dx = dxp[:, :, :h, :w].copy()
    # Replicated rows/cols fold their gradient back onto the true edge.
    if h % 2:
        dx[:, :, -1, :] += dxp[:, :, h, :w]
    if w % 2:
        dx[:, :, :, -1] += dxp[:, :, :h, w]
    if h % 2 and w % 2:
        dx[:, :, -1, -1] += dxp[:, :, h, w]
    return dx


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack b's channels after a's; batch and spatial extents must agree."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels expects rank-4 tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two tensors of identical shape."""
    a = as_tensor4(a)
    b = as_tensor4(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b
