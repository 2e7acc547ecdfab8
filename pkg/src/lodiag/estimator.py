"""Precision matrix estimation under a low-rank plus diagonal decomposition.

The estimator searches over precision matrices of the form ``theta = D - L``
with ``D`` positive diagonal and ``L`` symmetric positive semi-definite of
bounded rank, minimizing the Gaussian negative log-likelihood
``trace(theta @ S) - logdet(theta)``. A blockwise coordinate descent
alternates an analytic update of ``L`` (an eigenvalue shrinkage of
``D^{1/2} S D^{1/2}``) with a damped-Newton update of the diagonal ``D``.
Rank selection adds a scaled AIC penalty and sweeps candidate ranks with
warm starts.

Public entry points validate their inputs; the ``_core`` helpers assume
already-validated float64 arrays so the coordinate descent loop stays off
the validation path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import InvalidInput
from .linalg import (
    PIVOT_RTOL,
    as_positive_diagonal,
    as_symmetric,
    chol_pd,
    logdet_from_cholesky,
    symmetrize,
)

ARMIJO_C = 1e-4
MAX_HALVINGS = 60


@dataclass(frozen=True)
class FitConfig:
    """Convergence controls for the coordinate descent and its Newton step.

    bcd_tol is a relative objective-change threshold for the outer loop;
    newton_tol bounds the infinity norm of the diagonal program's gradient;
    rank_tol is the relative eigenvalue cutoff used to count the realized
    rank of the fitted low-rank component.
    """

    bcd_tol: float = 1e-7
    bcd_max_iter: int = 500
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    rank_tol: float = 1e-8

    def __post_init__(self):
        if min(self.bcd_tol, self.newton_tol, self.rank_tol) <= 0.0:
            raise InvalidInput("all tolerances must be positive")
        if self.bcd_max_iter < 1 or self.newton_max_iter < 1:
            raise InvalidInput("iteration caps must be at least 1")


@dataclass(frozen=True)
class PrecisionDecomposition:
    """A fitted precision matrix ``theta = diag(d) - L``.

    L is symmetric PSD of low rank, d is the strictly positive diagonal,
    theta is their difference (positive definite), and rank is the number
    of eigenvalues of L above the numerical cutoff.
    """

    L: np.ndarray
    d: np.ndarray
    theta: np.ndarray
    rank: int


@dataclass(frozen=True)
class FitResult:
    decomposition: PrecisionDecomposition
    objective: float
    objective_trace: tuple[float, ...]
    candidate_rank: int
    penalty: float
    converged: bool
    iterations: int

    @property
    def theta(self) -> np.ndarray:
        return self.decomposition.theta


class DiagonalUpdate(NamedTuple):
    """Result of the diagonal Newton solve: the diagonal, convergence flag,
    and the number of Newton iterations taken."""

    d: np.ndarray
    converged: bool
    iterations: int


def objective(theta, s) -> float:
    """Negative Gaussian log-likelihood ``trace(theta @ s) - logdet(theta)``.

    Also used as the validation criterion when tuning: evaluated at a
    held-out sample covariance it is the held-out negative log-likelihood
    up to an additive constant.
    """
    theta = as_symmetric(theta, "theta")
    s = as_symmetric(s, "S")
    if theta.shape != s.shape:
        raise InvalidInput("theta and S must have matching dimensions")
    g = chol_pd(theta)
    # trace(A @ B) for symmetric A, B.
    return float(np.sum(theta * s) - logdet_from_cholesky(g))


def _chol_or_none(theta: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor, or None when theta is not numerically PD
    (factorization failure or a pivot at/below the shared pivot floor)."""
    c, info = lapack.dpotrf(theta, lower=1)
    if info != 0:
        return None
    if np.diagonal(c).min() ** 2 <= PIVOT_RTOL * np.trace(theta) / theta.shape[0]:
        return None
    return c


def _top_eigs(m: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """The r largest eigenvalues of symmetric m (descending) and vectors."""
    p = m.shape[0]
    if 2 * r <= p:
        w, u, found, _, info = lapack.dsyevr(m, compute_v=1, range="I", il=p - r + 1, iu=p, lower=1)
        if info == 0 and found == r:
            return w[r - 1 :: -1], u[:, r - 1 :: -1]
    w, u = np.linalg.eigh(m)
    return w[p - r :][::-1], u[:, p - r :][:, ::-1]


def _update_l_core(d: np.ndarray, s: np.ndarray, r: int) -> np.ndarray:
    p = d.size
    if r == 0:
        return np.zeros((p, p))
    root = np.sqrt(d)
    m = root[:, None] * s * root[None, :]
    w, u = _top_eigs(symmetrize(m), r)
    v = 1.0 - 1.0 / np.maximum(w, 1.0)
    if not np.any(v > 0.0):
        return np.zeros((p, p))
    return symmetrize(root[:, None] * ((u * v) @ u.T) * root[None, :])


def update_L(d, s, r: int) -> np.ndarray:
    """Optimal rank-<= r PSD component ``L`` for a fixed positive diagonal.

    Eigendecompose ``M = D^{1/2} S D^{1/2}`` with eigenvalues w_1 >= ... and
    eigenvectors u_i; with U the top-r eigenvectors and
    V = diag(1 - 1/max(w_i, 1)),

        L = D^{1/2} U V U^T D^{1/2}

    globally minimizes ``trace((D - L) S) - logdet(D - L)`` over symmetric
    PSD ``L`` of rank at most r. Eigenvalues w_i <= 1 contribute nothing, so
    the realized rank can be smaller than r.
    """
    d = as_positive_diagonal(d, "d")
    s = as_symmetric(s, "S")
    if s.shape[0] != d.size:
        raise InvalidInput("d and S must have matching dimensions")
    if not 0 <= r <= d.size:
        raise InvalidInput(f"rank must be in [0, {d.size}], got {r}")
    return _update_l_core(d, s, r)


def _diag_value(d: np.ndarray, l: np.ndarray, s_diag: np.ndarray):
    """``sum(d * s_diag) - logdet(diag(d) - L)`` plus the Cholesky factor of
    ``diag(d) - L``, or None when that matrix is not PD."""
    if not np.all(np.isfinite(d)):
        return None
    theta = np.diag(d) - l
    c = _chol_or_none(theta)
    if c is None:
        return None
    return float(d @ s_diag) - 2.0 * float(np.sum(np.log(np.diagonal(c)))), c


def _update_d_core(
    l: np.ndarray, s_diag: np.ndarray, d: np.ndarray, cfg: FitConfig
) -> tuple[np.ndarray, bool, int, float]:
    """Damped Newton on the diagonal program from a feasible start.

    Returns (diagonal, converged, iterations, final objective value).
    """
    current = _diag_value(d, l, s_diag)
    if current is None:
        raise InvalidInput("d_init is infeasible: diag(d_init) - L is not positive definite")
    value, c = current
    eye = np.eye(d.size)

    for it in range(cfg.newton_max_iter):
        inv = scipy.linalg.cho_solve((c, True), eye, check_finite=False)
        grad = s_diag - np.diagonal(inv)
        if np.max(np.abs(grad)) <= cfg.newton_tol:
            return d, True, it, value
        hess = inv * inv
        _, step, info = lapack.dposv(hess, grad, lower=1)
        slope = float(grad @ step) if info == 0 else -1.0
        if slope <= 0.0:
            # Hessian numerically lost definiteness; fall back to gradient.
            step = grad.copy()
            slope = float(grad @ grad)
        # The objective is a self-concordant barrier in d: a first trial of
        # 1/(1 + Newton decrement) is always feasible and sufficient, and a
        # full step is safe once the decrement is small, so the halving
        # loop below almost never has to reject.
        decrement = np.sqrt(slope)
        t = 1.0 if decrement <= 0.25 else 1.0 / (1.0 + decrement)
        accepted = None
        for _ in range(MAX_HALVINGS):
            d_new = d - t * step
            trial = _diag_value(d_new, l, s_diag)
            if trial is not None and trial[0] <= value - ARMIJO_C * t * slope:
                accepted = (d_new, trial)
                break
            t /= 2.0
        if accepted is None:
            return d, False, it + 1, value
        d, (value, c) = accepted

    return d, False, cfg.newton_max_iter, value


def update_D(l, s, d_init, cfg: FitConfig = FitConfig()) -> DiagonalUpdate:
    """Minimize ``trace((diag(d) - L) S) - logdet(diag(d) - L)`` over d.

    The program is smooth and convex in the p diagonal entries with
    gradient ``S_jj - [(diag(d) - L)^{-1}]_jj`` and Hessian equal to the
    entrywise square of ``(diag(d) - L)^{-1}``; a damped Newton iteration
    with backtracking halving (Armijo constant 1e-4, feasibility enforced
    by Cholesky success) solves it. Returns the minimizer with a
    convergence flag; the iterate is returned as-is when no feasible
    descent is found within the iteration cap.
    """
    l = as_symmetric(l, "L")
    s = as_symmetric(s, "S")
    d = as_positive_diagonal(d_init, "d_init")
    if l.shape[0] != d.size or s.shape[0] != d.size:
        raise InvalidInput("L, S, and d_init must have matching dimensions")
    out, converged, iterations, _ = _update_d_core(l, np.diagonal(s).copy(), d, cfg)
    return DiagonalUpdate(out, converged, iterations)


def _realized_rank(l: np.ndarray, rank_tol: float) -> int:
    values = np.linalg.eigvalsh(symmetrize(l))
    cutoff = rank_tol * max(1.0, float(values[-1]))
    return int(np.sum(values > cutoff))


def _validate_spd_diag(s: np.ndarray) -> None:
    if np.any(np.diag(s) <= 0.0):
        raise InvalidInput("S has a non-positive diagonal entry (zero-variance coordinate)")


def fit_fixed_rank(s, r: int, d0=None, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit ``theta = diag(d) - L`` with rank(L) <= r by coordinate descent.

    Alternates the analytic L update and the Newton diagonal update from
    the starting diagonal ``d0`` (default: the rank-0 closed form
    ``1/diag(S)``) until the relative objective change drops below
    ``cfg.bcd_tol`` or the iteration cap is hit. The recorded objective
    trace is non-increasing. ``r = 0`` returns the closed form directly.
    """
    s = as_symmetric(s, "S")
    _validate_spd_diag(s)
    p = s.shape[0]
    if not 0 <= r <= p:
        raise InvalidInput(f"rank must be in [0, {p}], got {r}")

    s_diag = np.diagonal(s).copy()
    if r == 0:
        d = 1.0 / s_diag
        value = float(d @ s_diag + np.sum(np.log(s_diag)))
        decomposition = PrecisionDecomposition(np.zeros((p, p)), d, np.diag(d), 0)
        return FitResult(decomposition, value, (value,), 0, 0.0, True, 0)

    d = 1.0 / s_diag if d0 is None else as_positive_diagonal(d0, "d0")
    if d.size != p:
        raise InvalidInput("d0 and S must have matching dimensions")

    l = np.zeros((p, p))
    value = float(d @ s_diag - np.sum(np.log(d)))
    trace = [value]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.bcd_max_iter + 1):
        l = _update_l_core(d, s, r)
        d, _, _, diag_value = _update_d_core(l, s_diag, d, cfg)
        # trace(theta S) = d.s_diag - trace(L S), so the full objective is
        # the diagonal program's value minus trace(L S).
        new_value = diag_value - float(np.sum(l * s))
        trace.append(new_value)
        if abs(new_value - value) <= cfg.bcd_tol * max(1.0, abs(value)):
            converged = True
            value = new_value
            break
        value = new_value

    theta = np.diag(d) - l
    decomposition = PrecisionDecomposition(l, d, theta, _realized_rank(l, cfg.rank_tol))
    return FitResult(decomposition, trace[-1], tuple(trace), r, 0.0, converged, iterations)


def rank_penalty(r: int, p: int, n: int, delta: float) -> float:
    """Scaled AIC rank penalty ``delta * (2p(r+1) - r(r-1)) / n``.

    Strictly increasing in r for 0 <= r <= p, so larger fitted ranks must
    buy a real likelihood improvement to be selected.
    """
    if not 0 <= r <= p:
        raise InvalidInput(f"rank must be in [0, {p}], got {r}")
    if n < 1:
        raise InvalidInput("n must be at least 1")
    if delta <= 0.0:
        raise InvalidInput("delta must be positive")
    return delta * (2.0 * p * (r + 1) - r * (r - 1)) / n


def _validate_candidates(candidate_ranks: Sequence[int], p: int) -> list[int]:
    ranks = [int(r) for r in candidate_ranks]
    if not ranks:
        raise InvalidInput("candidate_ranks must be non-empty")
    if ranks != sorted(ranks):
        raise InvalidInput("candidate_ranks must be sorted ascending")
    if ranks[0] < 0 or ranks[-1] > p:
        raise InvalidInput(f"candidate ranks must lie in [0, {p}]")
    return ranks


def fit_rank_sweep(s, candidate_ranks: Sequence[int], cfg: FitConfig = FitConfig()) -> list[FitResult]:
    """Fixed-rank fits over ascending candidate ranks with warm starts.

    The first fit starts from the rank-0 closed form ``1/diag(S)``; each
    later fit starts from the previous fit's diagonal. Sharing one sweep
    across penalty values makes tuning cost independent of the grid size.
    """
    s = as_symmetric(s, "S")
    _validate_spd_diag(s)
    ranks = _validate_candidates(candidate_ranks, s.shape[0])
    fits: list[FitResult] = []
    d_start = 1.0 / np.diagonal(s)
    for r in ranks:
        fit = fit_fixed_rank(s, r, d_start, cfg)
        fits.append(fit)
        d_start = fit.decomposition.d
    return fits


def select_penalized(fits: Sequence[FitResult], n: int, delta: float) -> FitResult:
    """Pick the fit minimizing ``objective + rank_penalty(realized rank)``.

    The penalty is charged on the realized rank of the fitted L, not the
    candidate cap. Exact ties go to the earliest (smallest-rank) fit. The
    winning fit is returned with its penalty recorded.
    """
    if not fits:
        raise InvalidInput("no fits to select from")
    p = fits[0].decomposition.d.size
    best = None
    best_score = np.inf
    for fit in fits:
        score = fit.objective + rank_penalty(fit.decomposition.rank, p, n, delta)
        if score < best_score:
            best = fit
            best_score = score
    penalty = rank_penalty(best.decomposition.rank, p, n, delta)
    return dataclasses.replace(best, penalty=penalty)


def fit_rank_penalized(
    s,
    candidate_ranks: Sequence[int],
    n: int,
    delta: float,
    cfg: FitConfig = FitConfig(),
) -> FitResult:
    """Rank-penalized fit: sweep candidate ranks, then select by penalty.

    ``n`` is the sample size behind ``s``; it scales the AIC penalty.
    """
    return select_penalized(fit_rank_sweep(s, candidate_ranks, cfg), n, delta)


def precision_parts_from_covariance(l_sigma, d_sigma) -> tuple[np.ndarray, np.ndarray]:
    """Convert a covariance split ``sigma = L_sigma + diag(d_sigma)`` into the
    matching precision split ``sigma^{-1} = -L0 + diag(d0)``.

    Uses the rank-preserving inversion identity

        (L + D)^{-1} = -D^{-1} (I + L D^{-1})^{-1} L D^{-1} + D^{-1},

    so ``rank(L0) <= rank(L_sigma)``. Raises NotPositiveDefinite when the
    reassembled covariance is not positive definite.
    """
    l_sigma = as_symmetric(l_sigma, "L_sigma")
    d_sigma = as_positive_diagonal(d_sigma, "d_sigma")
    p = d_sigma.size
    if l_sigma.shape[0] != p:
        raise InvalidInput("L_sigma and d_sigma must have matching dimensions")
    chol_pd(l_sigma + np.diag(d_sigma))
    d_inv = 1.0 / d_sigma
    core = np.linalg.solve(np.eye(p) + l_sigma * d_inv[None, :], l_sigma)
    l0 = symmetrize(d_inv[:, None] * core * d_inv[None, :])
    return l0, d_inv.copy()
