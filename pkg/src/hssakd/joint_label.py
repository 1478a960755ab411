"""Joint supervised x self-supervised label space.

A joint label ``(y, j)`` pairs a class ``y in [0, N)`` with a transform index
``j in [0, M)``. Flat indices are supervised-major: ``flat = y * M + j``, so each
block of ``M`` consecutive entries belongs to one class. Checkpoints record this
ordering under :data:`ORDERING`.
"""

from __future__ import annotations

import numpy as np
import torch

ORDERING = "supervised_major"


def _check_sizes(N: int, M: int) -> None:
    if N < 1 or M < 1:
        raise ValueError(f"N and M must be positive, got N={N}, M={M}")


def encode(y, j, N: int, M: int):
    """Map ``(y, j)`` to its flat index. Works on ints, numpy arrays and tensors."""
    _check_sizes(N, M)
    if isinstance(y, torch.Tensor) or isinstance(j, torch.Tensor):
        y_t, j_t = torch.as_tensor(y), torch.as_tensor(j)
        if bool(((y_t < 0) | (y_t >= N)).any()) or bool(((j_t < 0) | (j_t >= M)).any()):
            raise ValueError(f"label out of range for N={N}, M={M}")
        return y_t * M + j_t
    y_a, j_a = np.asarray(y), np.asarray(j)
    if np.any((y_a < 0) | (y_a >= N)) or np.any((j_a < 0) | (j_a >= M)):
        raise ValueError(f"label out of range for N={N}, M={M}: y={y}, j={j}")
    flat = y_a * M + j_a
    return int(flat) if flat.ndim == 0 else flat


def decode(flat, N: int, M: int):
    """Inverse of :func:`encode`; returns ``(y, j)``."""
    _check_sizes(N, M)
    f = np.asarray(flat)
    if np.any((f < 0) | (f >= N * M)):
        raise ValueError(f"flat index out of range [0, {N * M}): {flat}")
    y, j = np.divmod(f, M)
    if f.ndim == 0:
        return int(y), int(j)
    return y, j


def _as_grid(q, N: int, M: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != N * M:
        raise ValueError(f"last dimension {q.shape[-1]} != N*M = {N * M}")
    if np.any(q < 0):
        raise ValueError("joint distribution has negative entries")
    if not np.allclose(q.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError("joint distribution does not sum to 1")
    return q.reshape(q.shape[:-1] + (N, M))


def marginal_supervised(q, N: int, M: int) -> np.ndarray:
    """Sum a joint distribution over transforms, giving an ``N``-way distribution."""
    return _as_grid(q, N, M).sum(axis=-1)


def marginal_selfsup(q, N: int, M: int) -> np.ndarray:
    """Sum a joint distribution over classes, giving an ``M``-way distribution."""
    return _as_grid(q, N, M).sum(axis=-2)
