"""Dense symmetric matrix primitives.

Everything here operates on plain numpy arrays: a symmetric matrix is a
float ``(p, p)`` array that is symmetric entrywise, and a diagonal matrix is
represented by its 1-D diagonal. All functions are pure and thread-safe.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import InvalidInput, NotPositiveDefinite

# A Cholesky pivot at or below PIVOT_RTOL * trace(A)/p means "not positive
# definite" for every routine in this package.
PIVOT_RTOL = 1e-12


class EigenPairs(NamedTuple):
    """Full spectral decomposition, eigenvalues sorted non-increasing.

    ``vectors[:, i]`` is the unit eigenvector paired with ``values[i]``.
    """

    values: np.ndarray
    vectors: np.ndarray


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (a + a.T)/2, making symmetry exact after float arithmetic."""
    return (a + a.T) / 2.0


def as_symmetric(a, name: str = "matrix", rtol: float = 1e-8) -> np.ndarray:
    """Validate a square, finite, symmetric array and return a float64 copy.

    Symmetry is checked up to ``rtol`` relative to the largest entry; the
    returned array is exactly symmetric.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInput(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")
    scale = max(1.0, np.abs(a).max())
    if np.abs(a - a.T).max() > rtol * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return symmetrize(a)


def as_positive_diagonal(d, name: str = "diagonal") -> np.ndarray:
    """Validate a strictly positive 1-D diagonal and return a float64 copy."""
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size < 1:
        raise InvalidInput(f"{name} must be a 1-D vector, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidInput(f"{name} has non-finite entries")
    if np.any(d <= 0.0):
        raise InvalidInput(f"{name} must be strictly positive")
    return d.copy()


def sym_eig(a) -> EigenPairs:
    """Spectral decomposition of a symmetric matrix, eigenvalues descending.

    Ties are broken by the ascending-order position LAPACK returns, so the
    result is deterministic for identical input.
    """
    a = as_symmetric(a)
    values, vectors = np.linalg.eigh(a)
    order = np.argsort(-values, kind="stable")
    return EigenPairs(values[order], vectors[:, order])


def chol_pd(a) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when the factorization fails or any pivot
    falls at or below ``PIVOT_RTOL * trace(a)/p``; success is this package's
    definition of "numerically positive definite".
    """
    a = as_symmetric(a)
    p = a.shape[0]
    pivot_floor = PIVOT_RTOL * np.trace(a) / p
    try:
        g = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    if np.min(np.diag(g)) ** 2 <= pivot_floor:
        raise NotPositiveDefinite("matrix is numerically singular")
    return g


def logdet_pd(a) -> float:
    """log-determinant of a symmetric positive definite matrix."""
    g = chol_pd(a)
    return float(2.0 * np.sum(np.log(np.diag(g))))


def logdet_from_cholesky(g: np.ndarray) -> float:
    """log-determinant given an already-computed lower Cholesky factor."""
    return float(2.0 * np.sum(np.log(np.diag(g))))


def inv_pd(a) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix, exactly symmetric."""
    g = chol_pd(a)
    inv = scipy.linalg.cho_solve((g, True), np.eye(g.shape[0]))
    return symmetrize(inv)


def solve_pd(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    g = chol_pd(a)
    return scipy.linalg.cho_solve((g, True), np.asarray(b, dtype=float))


def sample_covariance(x) -> np.ndarray:
    """Second-moment matrix ``x.T @ x / n`` of an (n, p) data matrix.

    The data are assumed already centered: no mean is subtracted and the
    divisor is n. Callers working with raw (uncentered) data should subtract
    column means first.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidInput(f"data must be a non-empty (n, p) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("data has non-finite entries")
    n = x.shape[0]
    return symmetrize(x.T @ x / n)
