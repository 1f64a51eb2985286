"""Flattened tensor products.

All flattening is row-major over the factor order: the first factor's index
varies slowest.  For vectors this coincides with ``np.kron``.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np


def flat_outer(*vecs: np.ndarray) -> np.ndarray:
    """flat(v1 (x) v2 (x) ... (x) vn)."""
    if not vecs:
        return np.ones(1)
    return reduce(np.kron, (np.asarray(v, dtype=float).ravel() for v in vecs))


def tensor_power(v: np.ndarray, k: int) -> np.ndarray:
    return flat_outer(*([v] * k))


def product_of_inner(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """prod_i <a_i, b_i>, the right-hand side of the flattening identity."""
    out = 1.0
    for x, y in zip(a, b, strict=True):
        out *= float(np.dot(x, y))
    return out
