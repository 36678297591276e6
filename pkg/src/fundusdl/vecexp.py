"""Exponential of a vector under the convention v^2 = ||v||^2.

With that algebra the powers of v collapse to scalars on even degrees and
multiples of v on odd degrees, so the exponential series has the closed form

    e^v = cosh(||v||) + (sinh(||v||) / ||v||) * v

split here into an explicit (scalar_part, vector_part) pair.  The zero vector
maps to (1, 0).  Standalone utility; nothing else in the package consumes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VecExpValue:
    scalar_part: float
    vector_part: np.ndarray


def vexp(v) -> VecExpValue:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"vexp expects a 1-D vector, got shape {v.shape}")
    r = float(np.linalg.norm(v))
    if r == 0.0:
        return VecExpValue(1.0, np.zeros_like(v))
    return VecExpValue(float(np.cosh(r)), (np.sinh(r) / r) * v)
