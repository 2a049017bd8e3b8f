"""Dense vector/matrix kernels shared by all numeric modules.

All arithmetic runs in float64 no matter how the inputs were stored;
32-bit tensors from model exports are promoted on construction so the
variance ratios downstream stay stable and reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = ["as_vector", "as_matrix", "outer", "population_variance", "softmax"]


def as_vector(data) -> np.ndarray:
    """Coerce to a finite 1-D float64 array with at least one entry."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size < 1:
        raise ValueError("vector must have at least one entry")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def as_matrix(data) -> np.ndarray:
    """Coerce to a finite 2-D float64 array (row-major)."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.size < 1:
        raise ValueError("matrix must be non-empty")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def outer(u, v) -> np.ndarray:
    """Outer product: result[i, j] = u[i] * v[j]."""
    return np.outer(as_vector(u), as_vector(v))


def population_variance(v) -> float:
    """Population variance (divide by len, not len-1); 0 for a single entry."""
    return float(np.var(as_vector(v)))


def softmax(v) -> np.ndarray:
    """Softmax with max-subtraction so huge logits cannot overflow."""
    x = as_vector(v)
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def logsumexp(v) -> float:
    # Internal helper; shift by the max for overflow safety.
    x = as_vector(v)
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))
