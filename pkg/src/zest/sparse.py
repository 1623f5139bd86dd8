"""Sparse feature vectors.

Document features (TF-IDF, cluster bag-of-words blocks) are sparse and
non-negative. A vector is stored as parallel arrays of strictly increasing
indices and finite weights; instances are treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ValidationError


@dataclass(frozen=True)
class SparseVec:
    """Sparse vector of non-negative weights with sorted indices."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValidationError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValidationError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValidationError(f"index out of range for dim {self.dim}")
            if not np.all(np.isfinite(val)) or np.any(val < 0):
                raise ValidationError("weights must be finite and non-negative")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dense(cls, dense) -> "SparseVec":
        dense = np.asarray(dense, dtype=np.float64)
        idx = np.nonzero(dense)[0]
        return cls(dense.shape[0], idx, dense[idx])

    @classmethod
    def zeros(cls, dim: int) -> "SparseVec":
        return cls(dim, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def normalized(self) -> "SparseVec":
        """L2-normalize; the zero vector is returned unchanged."""
        n = self.norm()
        if n == 0.0:
            return self
        return SparseVec(self.dim, self.indices, self.values / n)

    def dot_dense(self, u) -> float:
        """Inner product with a dense vector, O(nnz)."""
        u = np.asarray(u)
        if u.shape[0] != self.dim:
            raise DimensionMismatchError(f"dense operand has dim {u.shape[0]}, expected {self.dim}")
        return float(np.dot(u[self.indices], self.values))

    def dot(self, other: "SparseVec") -> float:
        if other.dim != self.dim:
            raise DimensionMismatchError(f"operand dims differ: {self.dim} vs {other.dim}")
        # merge by searchsorted over the shorter operand
        a, b = (self, other) if self.nnz <= other.nnz else (other, self)
        if a.nnz == 0:
            return 0.0
        pos = np.searchsorted(b.indices, a.indices)
        pos = np.clip(pos, 0, b.nnz - 1)
        hit = b.indices[pos] == a.indices
        return float(np.dot(a.values[hit], b.values[pos[hit]]))

    def __eq__(self, other):
        if not isinstance(other, SparseVec):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def concat(a: SparseVec, b: SparseVec) -> SparseVec:
    """Concatenate two sparse vectors; b's indices are shifted by a.dim."""
    idx = np.concatenate([a.indices, b.indices + a.dim])
    val = np.concatenate([a.values, b.values])
    return SparseVec(a.dim + b.dim, idx, val)


def stack_dense(vecs) -> np.ndarray:
    """Stack sparse vectors into a dense (n, dim) matrix."""
    vecs = list(vecs)
    if not vecs:
        return np.zeros((0, 0))
    dim = vecs[0].dim
    out = np.zeros((len(vecs), dim))
    for i, v in enumerate(vecs):
        if v.dim != dim:
            raise DimensionMismatchError(f"vector {i} has dim {v.dim}, expected {dim}")
        out[i, v.indices] = v.values
    return out


def cosine_distance(a: SparseVec, b: SparseVec) -> float:
    """1 - cosine similarity; zero-norm operands are treated as maximally distant."""
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(np.clip(1.0 - a.dot(b) / (na * nb), 0.0, 2.0))


def pairwise_cosine_distance(vecs) -> np.ndarray:
    """Dense pairwise cosine-distance matrix with an exact zero diagonal.

    Rows with zero norm get distance 1 to every other point (and 0 to
    themselves), keeping the matrix well defined for degenerate inputs.
    """
    x = stack_dense(vecs)
    n = x.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    xn = x / safe[:, None]
    dist = 1.0 - xn @ xn.T
    np.clip(dist, 0.0, 2.0, out=dist)
    dist[zero, :] = 1.0
    dist[:, zero] = 1.0
    np.fill_diagonal(dist, 0.0)
    return dist
