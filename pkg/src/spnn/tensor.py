"""Dense matrix substrate.

Matrices are 2-D numpy arrays; float32 is the training precision and
float64 is used by the gradient checks.  Products go through numpy's BLAS,
which is deterministic for a fixed thread count, so repeated evaluation is
bit-identical.
"""

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


def as_matrix(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Validate and convert to a C-contiguous 2-D array; rejects NaN/Inf."""
    a = np.ascontiguousarray(data, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {a.ndim} dimensions")
    if not np.isfinite(a).all():
        raise ValueError("matrix contains non-finite entries")
    return a


def identity(n: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.eye(n, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard of mismatched shapes {a.shape} and {b.shape}")
    return np.multiply(a, b, dtype=np.result_type(a, b))


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)
