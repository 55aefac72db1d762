import numpy as np


def least_squares_solve(A, b, rcond=None):
    """Minimum-norm x minimising ||Ax - b||_2.

    ``b`` may carry several right-hand sides as columns. An all-zero ``A``
    yields the zero solution.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError(f"A must be a non-empty matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"rows of A ({A.shape[0]}) != rows of b ({b.shape[0]})")
    if not np.any(A):
        return np.zeros((A.shape[1],) + b.shape[1:], dtype=np.result_type(A, b))
    x, *_ = np.linalg.lstsq(A, b, rcond=rcond)
    return x
