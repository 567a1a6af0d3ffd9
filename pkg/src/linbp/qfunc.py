"""Gaussian tail function and its inverse."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc


def Q(x):
    """Standard normal upper tail, ``Pr{Z > x}``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def Q_inv(p: float, tol: float = 1e-10) -> float:
    """Inverse of :func:`Q` by bisection, accurate to ``tol`` in the argument."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        q = 0.5 * math.erfc(mid / math.sqrt(2.0))
        if q == p:
            return mid
        if q > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
