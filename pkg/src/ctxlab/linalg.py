"""Dense float64 kernels with a fixed accumulation order.

Matrices and vectors are plain 2-D / 1-D ``numpy.ndarray`` objects of dtype
float64. The ``as_matrix`` / ``as_vector`` helpers play the role of
``sklearn.utils.check_array``: they coerce, copy-if-needed and reject
non-finite input.
"""

import numpy as np

from .exceptions import DegenerateRowError, EmptyInputError, NumericError, ShapeError

# Above this many multiply-adds the cumulative-sum path would allocate too much.
_CUMSUM_LIMIT = 1 << 20


def as_matrix(a, name="matrix"):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def matmul(a, b):
    """Matrix product whose every entry is summed over ``k`` in ascending order.

    The result is bit-identical to the textbook triple loop
    ``acc = 0; for k: acc += a[i, k] * b[k, j]``, independent of how many rows
    ``a`` has. That property is what lets prefill and incremental decoding agree
    exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    m, inner = a.shape
    if b.shape[0] != inner:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    n = b.shape[1]
    if inner == 0:
        return np.zeros((m, n))
    if m * inner * n <= _CUMSUM_LIMIT:
        # add.accumulate is strictly sequential along the axis.
        terms = a[:, :, None] * b[None, :, :]
        return np.ascontiguousarray(np.add.accumulate(terms, axis=1)[:, -1, :])
    out = np.zeros((m, n))
    for k in range(inner):
        out += a[:, k, None] * b[None, k, :]
    return out


def _row_sum(x):
    """Sequential left-to-right sum over the last axis, kept as a trailing axis."""
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1] + (1,))
    return np.add.accumulate(x, axis=-1)[..., -1:]


def softmax_rows(m, mask=None):
    """Row-wise softmax, stabilised by subtracting each row's unmasked maximum.

    ``mask`` is a boolean array of the same shape where ``True`` marks entries
    that participate. Masked entries come out as exactly 0.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D input, got {m.shape}")
    if mask is None:
        mask = np.ones(m.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise ShapeError(f"mask shape {mask.shape} != scores shape {m.shape}")
    live = mask.any(axis=1)
    if not live.all():
        row = int(np.flatnonzero(~live)[0])
        raise DegenerateRowError(f"row {row} is fully masked")
    row_max = np.where(mask, m, -np.inf).max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, m - row_max, 0.0)), 0.0)
    return e / _row_sum(e)


def rms_norm(x, gain, eps=1e-6):
    """Scale ``x`` to unit root-mean-square along its last axis, then by ``gain``.

    Works on a single vector or row-wise on a matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if gain.ndim != 1 or x.shape[-1] != gain.shape[0]:
        raise ShapeError(f"rms_norm: input width {x.shape[-1]} != gain length {gain.shape}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    ms = _row_sum(x * x) / x.shape[-1] + eps
    if np.any(ms == 0):
        raise NumericError("rms_norm of an all-zero input with eps=0")
    return gain * (x / np.sqrt(ms))


def argmax(v):
    """Index of the largest entry; ties resolve to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"argmax needs a 1-D input, got {v.shape}")
    if v.size == 0:
        raise EmptyInputError("argmax of an empty vector")
    return int(np.argmax(v))
