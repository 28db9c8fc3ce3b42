"""Dense real linear algebra: Frobenius operations, SPD factors, whitening.

Everything is float64. Operations are pure functions over immutable
inputs; :class:`SpdMatrix` instances are frozen and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class ShapeError(ValueError):
    """Incompatible array shapes."""


class AsymmetryError(ValueError):
    """Matrix expected to be symmetric is not."""


class NotPositiveDefinite(ValueError):
    """Cholesky factorization failed: matrix is not numerically SPD."""


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        # vectors are admitted as n x 1 columns for Frobenius arithmetic
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return a


def frob_norm_sq(m) -> float:
    """Squared Frobenius norm, sum of squared entries."""
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entry in frob_norm_sq input")
    return frob_inner(a, a)


def frob_inner(a, b) -> float:
    """Frobenius inner product: entrywise product summed."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def outer_product_norm_sq(u, v) -> float:
    """||u v^T||_F^2 = ||u||^2 ||v||^2, without materializing the outer product."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NumericError("non-finite entry in outer_product_norm_sq input")
    return float(np.dot(u.ravel(), u.ravel()) * np.dot(v.ravel(), v.ravel()))


@dataclass
class MemoryMatrix:
    """The edited weight matrix W (d_v rows x d_k columns).

    Entries must be finite; the array is owned by the enclosing editor
    state and is mutated in place by sequential edits.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.array(self.data, dtype=np.float64, copy=True)
        if self.data.ndim != 2:
            raise ShapeError(f"memory matrix must be 2-D, got ndim={self.data.ndim}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError(f"memory matrix dimensions must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NumericError("memory matrix contains non-finite entries")

    @property
    def d_v(self) -> int:
        return self.data.shape[0]

    @property
    def d_k(self) -> int:
        return self.data.shape[1]

    def norm_sq(self) -> float:
        return frob_norm_sq(self.data)

    def copy(self) -> "MemoryMatrix":
        return MemoryMatrix(self.data)

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass
class EditDelta:
    """Rank-one update held in factored form: (value_diff)(key_row)^T / scale."""

    value_diff: np.ndarray
    key_row: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        self.value_diff = np.asarray(self.value_diff, dtype=np.float64)
        self.key_row = np.asarray(self.key_row, dtype=np.float64)
        if self.scale <= 0.0 or not np.isfinite(self.scale):
            raise NumericError(f"edit delta scale must be positive, got {self.scale}")

    def materialize(self) -> np.ndarray:
        return np.outer(self.value_diff, self.key_row) / self.scale

    def norm_sq(self) -> float:
        return outer_product_norm_sq(self.value_diff, self.key_row) / self.scale**2


SYMMETRY_RTOL = 1e-12
# Cholesky pivots below this fraction of the mean diagonal are treated as zero.
PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive definite matrix with its lower Cholesky factor.

    Construct via :func:`cholesky`. The symmetric square root (used for
    whitening) is computed lazily from an eigendecomposition; the Cholesky
    factor is what solves and sampling use.
    """

    data: np.ndarray
    chol_lower: np.ndarray
    cond_estimate: float

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.data, np.eye(self.dim)))

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.data)
        return vals, vecs

    @cached_property
    def sqrt(self) -> np.ndarray:
        """Symmetric square root C^{1/2}."""
        vals, vecs = self._eig
        if np.any(vals <= 0):
            raise NotPositiveDefinite("eigenvalue <= 0 in SPD square root")
        root = (vecs * np.sqrt(vals)) @ vecs.T
        root.setflags(write=False)
        return root

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        """Symmetric inverse square root C^{-1/2}."""
        vals, vecs = self._eig
        if np.any(vals <= 0):
            raise NotPositiveDefinite("eigenvalue <= 0 in SPD inverse square root")
        root = (vecs / np.sqrt(vals)) @ vecs.T
        root.setflags(write=False)
        return root

    def solve(self, v: np.ndarray) -> np.ndarray:
        """C^{-1} v via two triangular solves; C^{-1} is never formed."""
        y = scipy.linalg.solve_triangular(self.chol_lower, v, lower=True)
        return scipy.linalg.solve_triangular(self.chol_lower.T, y, lower=False)

    def quad_inv(self, v: np.ndarray) -> float:
        """v^T C^{-1} v = ||L^{-1} v||^2; positive by construction."""
        y = scipy.linalg.solve_triangular(self.chol_lower, v, lower=True)
        return float(np.dot(y, y))

    @staticmethod
    def identity(dim: int) -> "SpdMatrix":
        eye = np.eye(dim)
        return cholesky(eye)


def cholesky(c) -> SpdMatrix:
    """Certify a symmetric matrix as SPD and return it with its factor.

    Raises AsymmetryError when the input is not symmetric within
    tolerance, NotPositiveDefinite when factorization fails or any pivot
    falls at or below PIVOT_RTOL times the mean diagonal.
    """
    a = _as_matrix(c)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"SPD matrix must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entry in SPD candidate")
    tol = SYMMETRY_RTOL * np.maximum(1.0, np.abs(a))
    if np.any(np.abs(a - a.T) > tol):
        raise AsymmetryError("matrix is not symmetric within tolerance")
    sym = 0.5 * (a + a.T)
    try:
        lower = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    d = sym.shape[0]
    pivot_floor = PIVOT_RTOL * np.trace(sym) / d
    if np.any(np.diag(lower) ** 2 <= pivot_floor):
        raise NotPositiveDefinite("pivot below positive-definiteness floor")
    cond = float(np.linalg.cond(sym, 2))
    sym.setflags(write=False)
    lower.setflags(write=False)
    return SpdMatrix(data=sym, chol_lower=lower, cond_estimate=cond)


def whiten(w, k, c: SpdMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Map (W, k) to (W C^{1/2}, C^{-1/2} k) using the symmetric root.

    The map preserves the retrieved value: (W C^{1/2})(C^{-1/2} k) = W k.
    """
    w = np.asarray(w, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError("whiten expects a matrix as first argument")
    if w.shape[1] != c.dim or k.shape != (c.dim,):
        raise ShapeError(
            f"incompatible shapes: W {w.shape}, k {k.shape}, C dim {c.dim}"
        )
    if c.is_identity:
        return w.copy(), k.copy()
    return w @ c.sqrt, c.inv_sqrt @ k


def random_spd(dim: int, cond: float, rng: np.random.Generator) -> SpdMatrix:
    """Random SPD matrix Q diag(lam) Q^T with log-uniform spectrum.

    The extreme eigenvalues are pinned so the condition number is exactly
    ``cond``; the spectrum is rescaled to trace = dim so keys drawn with
    this second moment have E||k||^2 = dim, matching the isotropic case.
    """
    if dim < 1:
        raise ShapeError("dim must be >= 1")
    if cond < 1.0:
        raise ValueError(f"condition number must be >= 1, got {cond}")
    if dim == 1 or cond == 1.0:
        return SpdMatrix.identity(dim)
    lo, hi = 1.0 / np.sqrt(cond), np.sqrt(cond)
    lam = np.exp(rng.uniform(np.log(lo), np.log(hi), size=dim))
    lam[0], lam[-1] = lo, hi
    lam *= dim / lam.sum()
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return cholesky((q * lam) @ q.T)
