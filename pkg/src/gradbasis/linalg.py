"""Dense linear algebra substrate: SVD, numerical rank, null spaces, least squares.

Everything here is deterministic LAPACK (through numpy) so that reports are
reproducible bit-for-bit under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


def default_rtol(shape: tuple[int, ...]) -> float:
    """Relative singular-value cutoff used when the caller does not pass one."""
    return 1e-10 * max(1, *shape)


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidInput(f"expected a matrix, got array with ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput("matrix has non-finite entries")
    return A


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a subspace of R^ambient_dim, stored column-wise."""

    ambient_dim: int
    basis: np.ndarray
    tol: float = 1e-10

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ v)

    def residual(self, v: np.ndarray) -> np.ndarray:
        """Component of ``v`` orthogonal to the subspace (columns handled independently)."""
        return v - self.project(v)

    def check(self) -> bool:
        G = self.basis.T @ self.basis
        return bool(np.max(np.abs(G - np.eye(self.dim)), initial=0.0) <= self.tol)


def svd(A) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U @ diag(sigma) @ V.T`` with nonincreasing ``sigma``.

    Returns ``V`` (not ``V.T``) so that both factors have orthonormal columns.
    """
    A = _as_matrix(A)
    if A.size == 0:
        k = min(A.shape)
        return np.zeros((A.shape[0], k)), np.zeros(k), np.zeros((A.shape[1], k))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return U, s, Vt.T


def _rank_from_sigma(sigma: np.ndarray, rtol: float) -> int:
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))


def numerical_rank(A, rtol: float | None = None) -> int:
    """Number of singular values above ``rtol * sigma_max`` (0 for the zero matrix)."""
    A = _as_matrix(A)
    if rtol is None:
        rtol = default_rtol(A.shape)
    if rtol <= 0:
        raise InvalidInput("rtol must be positive")
    sigma = np.linalg.svd(A, compute_uv=False) if A.size else np.zeros(0)
    return _rank_from_sigma(sigma, rtol)


def column_space(A, rtol: float | None = None) -> SubspaceBasis:
    """Orthonormal basis of range(A) at the given relative cutoff."""
    A = _as_matrix(A)
    if rtol is None:
        rtol = default_rtol(A.shape)
    U, s, _ = svd(A)
    r = _rank_from_sigma(s, rtol)
    return SubspaceBasis(A.shape[0], U[:, :r].copy())


def left_null_space(A, rtol: float | None = None) -> SubspaceBasis:
    """Orthonormal basis of ``{w : w^T A = 0}``; dimension ``rows - rank``."""
    A = _as_matrix(A)
    if rtol is None:
        rtol = default_rtol(A.shape)
    if rtol <= 0:
        raise InvalidInput("rtol must be positive")
    rows = A.shape[0]
    if A.size == 0:
        return SubspaceBasis(rows, np.eye(rows))
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    r = _rank_from_sigma(s, rtol)
    return SubspaceBasis(rows, U[:, r:].copy())


def null_space(A, rtol: float | None = None) -> SubspaceBasis:
    """Orthonormal basis of ``{v : A v = 0}``."""
    A = _as_matrix(A)
    return left_null_space(A.T, rtol)


def min_norm_lstsq(A, b, w=None, rtol: float | None = None) -> np.ndarray:
    """Minimum-norm minimizer of ``sum_i w_i (A_i x - b_i)^2``.

    Rows are scaled by ``sqrt(w_i)`` and the unweighted problem is solved by
    SVD pseudoinversion, dropping singular values below ``rtol * sigma_max``.
    ``b`` may be a vector or a matrix of right-hand sides.
    """
    A = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise InvalidInput(f"dimension mismatch: A has {A.shape[0]} rows, b has {b.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise InvalidInput("right-hand side has non-finite entries")
    if w is None:
        sw = np.ones(A.shape[0])
    else:
        w = np.asarray(w, dtype=float).ravel()
        if w.shape[0] != A.shape[0]:
            raise InvalidInput("weight vector length does not match rows of A")
        if np.any(~(w > 0)):
            raise InvalidInput("weights must be strictly positive")
        sw = np.sqrt(w)
    if rtol is None:
        rtol = default_rtol(A.shape)
    As = A * sw[:, None]
    bs = b * (sw if b.ndim == 1 else sw[:, None])
    U, s, V = svd(As)
    r = _rank_from_sigma(s, rtol)
    coef = U[:, :r].T @ bs
    coef = coef / (s[:r] if b.ndim == 1 else s[:r, None])
    return V[:, :r] @ coef


def projection_residual(basis: SubspaceBasis, v: np.ndarray) -> float:
    """Relative distance ``||v - P v|| / max(1, ||v||)`` of ``v`` to the subspace."""
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(basis.residual(v)) / max(1.0, np.linalg.norm(v)))


def subspace_residuals(A, B, rtol: float | None = None) -> tuple[float, float]:
    """Mutual containment residuals between range(A) and range(B).

    Returns ``(res_AinB, res_BinA)``: the largest residual of an orthonormal
    basis vector of one column space after projection onto the other.  Both
    are ~0 exactly when the two column spaces coincide.
    """
    QA = column_space(A, rtol)
    QB = column_space(B, rtol)

    def _res(Q: SubspaceBasis, P: SubspaceBasis) -> float:
        if Q.dim == 0:
            return 0.0
        return float(np.max(np.linalg.norm(P.residual(Q.basis), axis=0)))

    return _res(QA, QB), _res(QB, QA)
