"""Dense matrix arithmetic and seeded random streams.

A "matrix" throughout this package is a 2-D, C-contiguous ``numpy.ndarray``
of float64. Every public operation here validates its result, so a matrix
returned from this module never carries NaN/Inf entries. Heavy lifting
(products, reductions) is delegated to numpy; for a fixed platform and
build the reduction order is fixed, which keeps repeated runs bit-identical
on the same machine (single-threaded BLAS recommended, see README).
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, ShapeError

__all__ = [
    "RngStream",
    "as_matrix",
    "bernoulli_mask",
    "check_finite",
    "elementwise",
    "gaussian_init",
    "matmul",
]

_U64 = (1 << 64) - 1


def _stream_key(stream_id: int | str) -> int:
    """Map a stream id to a stable non-negative integer."""
    if isinstance(stream_id, str):
        digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return int(stream_id) & _U64


class RngStream:
    """Counter-based (Philox) random stream with documented sub-stream derivation.

    The same seed always yields the same sequence, across runs and platforms.
    ``split(stream_id)`` derives an independent child stream by mixing the id
    into the seed material; splitting never consumes draws from the parent.
    A stream is single-owner: share it across consumers only via ``split``.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & _U64
        self._path = _path
        ss = np.random.SeedSequence([self.seed, *(_path or (0,))])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, stream_id: int | str) -> "RngStream":
        """Derive an independent child stream for the given id."""
        return RngStream(self.seed, self._path + (_stream_key(stream_id),))

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. draws from U[0, 1), shape (n,)."""
        return self._gen.random(int(n))

    def normal(self, rows: int, cols: int) -> np.ndarray:
        """Standard-normal matrix of the given shape."""
        return self._gen.standard_normal((int(rows), int(cols)))

    def permutation(self, n: int) -> np.ndarray:
        """A random permutation of range(n)."""
        return self._gen.permutation(int(n))

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """n i.i.d. integers in [low, high)."""
        return self._gen.integers(low, high, size=int(n))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self._path})"


def as_matrix(data) -> np.ndarray:
    """Coerce input to a finite 2-D float64 matrix (1-D input becomes one row)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"matrix must be 2-D, got ndim={a.ndim}")
    a = np.ascontiguousarray(a)
    check_finite(a, "as_matrix")
    return a


def check_finite(a: np.ndarray, context: str) -> np.ndarray:
    """Raise NumericError naming the first offending index if `a` is not finite."""
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(a)))[0]
        idx = tuple(int(i) for i in bad)
        raise NumericError(f"{context}: non-finite entry at index {idx}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with shape checking and finiteness validation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):  # reported as NumericError
        return check_finite(a @ b, "matmul")


def elementwise(a: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """Apply a scalar function entry-by-entry.

    Generic utility for arbitrary Python scalar functions; hot paths use
    vectorized numpy expressions directly. A non-finite (or raising) entry
    is reported with its (row, col) index.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    out = np.empty_like(a)
    rows, cols = a.shape
    with np.errstate(all="ignore"):
        for i in range(rows):
            for j in range(cols):
                try:
                    v = float(f(a[i, j]))
                except Exception as exc:
                    raise NumericError(f"elementwise: f failed at index ({i}, {j}): {exc}") from exc
                if not np.isfinite(v):
                    raise NumericError(f"elementwise: non-finite entry at index ({i}, {j})")
                out[i, j] = v
    return out


def bernoulli_mask(rng: RngStream, p_drop: float, n: int) -> np.ndarray:
    """1 x n matrix of {0, 1}: entry is 0 with probability p_drop, else 1.

    Consumes exactly n uniform draws from the stream.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise DomainError(f"p_drop must be in [0, 1], got {p_drop}")
    u = rng.uniform(n)
    return (u >= p_drop).astype(np.float64).reshape(1, -1)


def gaussian_init(rng: RngStream, rows: int, cols: int, scale: float) -> np.ndarray:
    """Matrix of i.i.d. N(0, scale^2) entries, deterministic per stream."""
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return check_finite(rng.normal(rows, cols) * scale, "gaussian_init")
