"""Classification losses and the accuracy metric.

The headline loss is binary cross-entropy averaged over the class vector,
applied to softmax outputs (the combination the training recipe calls for);
categorical cross-entropy is available behind the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIP = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray  # d(loss)/d(yhat), same shape as yhat


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: targets {y.shape} vs predictions {yhat.shape}")
    single = y.ndim == 1
    if single:
        y = y[None, :]
        yhat = yhat[None, :]
    if y.ndim != 2:
        raise ValueError(f"expected (k,) or (n, k) arrays, got rank {y.ndim}")
    return y, yhat, single


def bce(y, yhat) -> LossValue:
    """Mean binary cross-entropy over the class axis, then over samples.

    Predictions are clipped to [1e-7, 1 - 1e-7] before the logs; coordinates
    that were clipped get zero gradient (the exact subgradient of the
    clipped composite).
    """
    y, yhat, single = _pair(y, yhat)
    n, k = y.shape
    p = np.clip(yhat, CLIP, 1.0 - CLIP)
    value = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    grad = -(y / p - (1.0 - y) / (1.0 - p)) / (n * k)
    grad = np.where((yhat > CLIP) & (yhat < 1.0 - CLIP), grad, 0.0)
    return LossValue(value, grad[0] if single else grad)


def cce(y, yhat) -> LossValue:
    """Categorical cross-entropy -sum(y log yhat), averaged over samples."""
    y, yhat, single = _pair(y, yhat)
    n, k = y.shape
    p = np.clip(yhat, CLIP, 1.0 - CLIP)
    value = float(-np.sum(y * np.log(p)) / n)
    grad = -(y / p) / n
    grad = np.where(yhat > CLIP, grad, 0.0)
    return LossValue(value, grad[0] if single else grad)


LOSSES = {"bce": bce, "cce": cce}


def accuracy(labels, yhat) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest index."""
    labels = np.asarray(labels)
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.ndim == 1:
        yhat = yhat[None, :]
    if labels.shape[0] != yhat.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {yhat.shape[0]} prediction rows")
    if labels.shape[0] == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    return float(np.mean(np.argmax(yhat, axis=1) == labels))
