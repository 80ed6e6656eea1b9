from typing import Optional

import numpy as np


def dense_reference(a: np.ndarray, b: np.ndarray, c0: Optional[np.ndarray] = None) -> np.ndarray:
    """Single-rank dense product C0 + A B."""
    product = a @ b
    return product if c0 is None else c0 + product


def max_relative_error(
    c: np.ndarray, a: np.ndarray, b: np.ndarray, c0: Optional[np.ndarray] = None
) -> float:
    """
    Largest element-wise error of ``c`` against C0 + A B, each element scaled
    by (|A| |B| + |C0|) at that position.
    """
    reference = dense_reference(a, b, c0)
    scale = np.abs(a) @ np.abs(b)
    if c0 is not None:
        scale = scale + np.abs(c0)
    scale = np.maximum(scale, np.finfo(np.float64).tiny)
    if c.size == 0:
        return 0.0
    return float(np.max(np.abs(c - reference) / scale))
