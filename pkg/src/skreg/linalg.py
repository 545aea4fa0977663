"""Dense float64 tensors and the SPD linear algebra the rest of the package builds on.

Everything is row-major float64. There is no broadcasting: shape mismatches are
hard errors so that gradient code stays auditable. Factorizations are delegated
to LAPACK via numpy/scipy; the contracts (symmetrization, error mapping,
tolerances) live here.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .exceptions import DimensionMismatch, NotPositiveDefinite

# Convention used throughout the package: a Tensor is a C-contiguous float64
# ndarray whose shape is its authoritative metadata.
Tensor = np.ndarray

SYMMETRY_ATOL = 1e-10


def tensor(values, shape=None) -> Tensor:
    """Build a float64 tensor, optionally reshaped, and verify it is finite."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        expected = int(np.prod(shape))
        if a.size != expected:
            raise DimensionMismatch(
                f"cannot view {a.size} elements as shape {tuple(shape)}")
        a = a.reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains NaN or Inf")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatch(
            f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    return a @ b


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionMismatch(f"transpose expects a matrix, got {a.shape}")
    return np.ascontiguousarray(a.T)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionMismatch(f"add: {a.shape} vs {b.shape}")
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mul: {a.shape} vs {b.shape}")
    return a * b


def scale(a: Tensor, c: float) -> Tensor:
    return a * float(c)


class SymMatrix:
    """A d x d symmetric matrix.

    The constructor symmetrizes its input as (M + M^T)/2 and the stored matrix
    therefore satisfies max|M - M^T| <= 1e-10 by construction. Positive
    definiteness is not checked here; operations that need it raise
    NotPositiveDefinite when the Cholesky factorization fails.
    """

    __slots__ = ("_m",)

    def __init__(self, values):
        m = np.ascontiguousarray(values, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"SymMatrix needs a square matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("SymMatrix contains NaN or Inf")
        m = (m + m.T) / 2.0
        assert np.max(np.abs(m - m.T)) <= SYMMETRY_ATOL
        self._m = m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._m

    def __repr__(self) -> str:
        return f"SymMatrix(dim={self.dim})"


def _as_square(m) -> np.ndarray:
    a = m.array if isinstance(m, SymMatrix) else np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
    return a


def cholesky(m) -> np.ndarray:
    """Lower-triangular L with L L^T = m. Raises NotPositiveDefinite."""
    a = _as_square(m)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def log_det(m) -> float:
    """log(det m) for SPD m, computed as 2*sum(log diag L)."""
    ell = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(ell))))


def solve_spd(m, b) -> np.ndarray:
    """Solve m x = b for SPD m; b may be a vector or a matrix of columns."""
    a = _as_square(m)
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != a.shape[0]:
        raise DimensionMismatch(
            f"solve_spd: matrix dim {a.shape[0]} vs rhs length {rhs.shape[0]}")
    try:
        factor = sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return sla.cho_solve(factor, rhs, check_finite=False)


def spd_inverse(m) -> np.ndarray:
    """Inverse of an SPD matrix, symmetrized against round-off."""
    a = _as_square(m)
    inv = solve_spd(a, np.eye(a.shape[0]))
    return (inv + inv.T) / 2.0
