"""Minimum-variance portfolio construction and rolling backtesting.

Weights solve the two-constraint Markowitz program: minimize portfolio
variance subject to a target mean return and full investment. With a
precision matrix in hand the solution is closed form, so no quadratic
programming solver is involved. Short positions are allowed: weights can
be negative and only their sum is constrained to one.

The backtester walks a monthly returns panel, re-estimating the mean and
precision matrix on a trailing window per period, and scores the realized
out-of-window returns. The low-rank-plus-diagonal estimator tunes its
penalty scale by three-fold cross-validation inside each window.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateReturns,
    InfeasibleConstraints,
    InvalidInput,
    NotPositiveDefinite,
    SingularSampleCovariance,
)
from .estimator import FitConfig, fit_rank_sweep, select_penalized
from .linalg import as_symmetric, inv_pd, sample_covariance

DEFAULT_BACKTEST_RANKS = tuple(range(2, 29, 2))
DEFAULT_BACKTEST_DELTAS = tuple(round(0.2 * k, 10) for k in range(1, 16))


class EstimatorKind(enum.Enum):
    """Which precision matrix estimate feeds the weight computation."""

    SAMPLE = "sample"
    DIAGONAL = "diagonal"
    LOW_RANK = "ld"


@dataclass(frozen=True)
class ReturnsPanel:
    """A T x p panel of per-period fractional returns with labels.

    Dates must be strictly increasing as strings (ISO-8601 or any other
    sortable convention); missing values are rejected at construction.
    """

    dates: tuple[str, ...]
    assets: tuple[str, ...]
    returns: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "returns", returns)
        t, p = returns.shape if returns.ndim == 2 else (0, 0)
        if returns.ndim != 2 or t < 2 or p < 1:
            raise InvalidInput("returns must be a (T, p) matrix with T >= 2")
        if len(self.dates) != t or len(self.assets) != p:
            raise InvalidInput("label lengths must match the returns shape")
        if not np.all(np.isfinite(returns)):
            raise InvalidInput("returns contain missing or non-finite values")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise InvalidInput("dates must be strictly increasing")

    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @classmethod
    def from_csv(cls, text: str) -> "ReturnsPanel":
        """Parse 'date,<asset>,...' header plus one row per period.

        Blank cells and malformed numbers are hard errors.
        """
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) < 3:
            raise InvalidInput("panel CSV needs a header and at least two rows")
        header = [c.strip() for c in lines[0].split(",")]
        if len(header) < 2 or header[0].lower() != "date":
            raise InvalidInput("panel CSV header must be 'date,<asset1>,<asset2>,...'")
        assets = tuple(header[1:])
        dates = []
        rows = []
        for line in lines[1:]:
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(header):
                raise InvalidInput(f"row has {len(cells)} cells, expected {len(header)}")
            if any(c == "" for c in cells):
                raise InvalidInput("panel CSV contains blank cells")
            dates.append(cells[0])
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise InvalidInput(f"non-numeric return value in row dated {cells[0]}") from exc
        return cls(tuple(dates), assets, np.array(rows))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("date," + ",".join(self.assets) + "\n")
        for date, row in zip(self.dates, self.returns):
            out.write(date + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
        return out.getvalue()


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 72
    mu0: float = 0.013
    estimator: EstimatorKind = EstimatorKind.LOW_RANK
    candidate_ranks: tuple[int, ...] = DEFAULT_BACKTEST_RANKS
    delta_grid: tuple[float, ...] = DEFAULT_BACKTEST_DELTAS
    fit: FitConfig = FitConfig()

    def __post_init__(self):
        if self.window < 2:
            raise InvalidInput("window must be at least 2")
        if not np.isfinite(self.mu0):
            raise InvalidInput("mu0 must be finite")
        if self.estimator is EstimatorKind.LOW_RANK:
            if not self.candidate_ranks or not self.delta_grid:
                raise InvalidInput("candidate_ranks and delta_grid must be non-empty")


@dataclass(frozen=True)
class PortfolioResult:
    """Backtest output: per-period weights and returns plus summary stats.

    ``stderr`` is the standard error of the mean return
    (sample standard deviation over sqrt of the period count); the Sharpe
    ratio divides the mean by the sample standard deviation itself.
    """

    dates: tuple[str, ...]
    weights: np.ndarray
    realized_returns: np.ndarray
    mean_return: float
    stderr: float
    sharpe: float

    def to_csv(self, assets: Sequence[str]) -> str:
        out = io.StringIO()
        out.write("date,return," + ",".join(assets) + "\n")
        for date, ret, w in zip(self.dates, self.realized_returns, self.weights):
            out.write(f"{date},{ret:.17g}," + ",".join(f"{v:.17g}" for v in w) + "\n")
        return out.getvalue()

    def format_summary(self) -> str:
        return (
            f"periods       {self.realized_returns.size}\n"
            f"mean return   {self.mean_return:.6f}\n"
            f"stderr        {self.stderr:.6f}\n"
            f"sharpe        {self.sharpe:.4f}\n"
        )


def markowitz_weights(theta, mu, mu0: float) -> np.ndarray:
    """Closed-form minimum-variance weights hitting a target mean return.

    Solves ``min w' Sigma w`` subject to ``w' mu = mu0`` and ``w' 1 = 1``
    using the precision matrix theta = Sigma^{-1}: with A = [mu, 1] and
    b = (mu0, 1), ``w = theta A (A' theta A)^{-1} b``. When mu is constant
    the two constraints coincide; the target must then equal that constant
    (otherwise the system is infeasible) and the single-constraint
    minimum-variance solution is returned.
    """
    theta = as_symmetric(theta, "theta")
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size != theta.shape[0]:
        raise InvalidInput("mu must be a vector matching theta's dimension")
    if not np.all(np.isfinite(mu)) or not np.isfinite(mu0):
        raise InvalidInput("mu and mu0 must be finite")

    ones = np.ones_like(mu)
    mu_bar = float(mu.mean())
    if np.max(np.abs(mu - mu_bar)) <= 1e-12 * max(1.0, np.max(np.abs(mu))):
        if abs(mu0 - mu_bar) > 1e-8 * max(1.0, abs(mu_bar)):
            raise InfeasibleConstraints("constant mean vector cannot meet the return target")
        tw = theta @ ones
        return tw / float(ones @ tw)

    a = np.column_stack([mu, ones])
    ta = theta @ a
    m = a.T @ ta
    try:
        x = np.linalg.solve(m, np.array([mu0, 1.0]))
    except np.linalg.LinAlgError as exc:
        raise InfeasibleConstraints("constraint system is singular") from exc
    return ta @ x


def sharpe_ratio(returns, benchmark: float = 0.0) -> float:
    """Mean excess return over its sample standard deviation (ddof 1)."""
    x = np.asarray(returns, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidInput("need at least two return observations")
    excess = x - benchmark
    sd = float(excess.std(ddof=1))
    if sd == 0.0:
        raise DegenerateReturns("returns have zero variance")
    return float(excess.mean()) / sd


def _window_moments(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Window mean and the covariance of the demeaned rows."""
    mu = rows.mean(axis=0)
    return mu, sample_covariance(rows - mu)


def _low_rank_theta(s, n, candidate_ranks, delta, cfg) -> np.ndarray:
    fits = fit_rank_sweep(s, candidate_ranks, cfg)
    return select_penalized(fits, n, delta).theta


def cv_select(
    rows: np.ndarray,
    delta_grid: Sequence[float],
    candidate_ranks: Sequence[int],
    mu0: float,
    cfg: FitConfig = FitConfig(),
) -> float:
    """Choose the penalty scale by three-fold cross-validated mean return.

    The window splits into three contiguous blocks; each block is held out
    once while the mean and the tuned precision matrix are re-estimated on
    the other two, the resulting portfolio's returns on the held-out months
    are recorded, and the penalty value with the highest overall average
    wins (ties to the smallest value).
    """
    rows = np.asarray(rows, dtype=float)
    t = rows.shape[0]
    if t % 3 != 0 or t < 3:
        raise InvalidInput("cross-validation window must split into three equal folds")
    deltas = sorted(set(float(d) for d in delta_grid))
    if not deltas:
        raise InvalidInput("delta_grid must be non-empty")
    fold = t // 3
    held_out = {delta: [] for delta in deltas}
    for f in range(3):
        test = slice(f * fold, (f + 1) * fold)
        train_rows = np.delete(rows, np.arange(f * fold, (f + 1) * fold), axis=0)
        mu_hat, s_train = _window_moments(train_rows)
        fits = fit_rank_sweep(s_train, candidate_ranks, cfg)
        for delta in deltas:
            theta = select_penalized(fits, train_rows.shape[0], delta).theta
            w = markowitz_weights(theta, mu_hat, mu0)
            held_out[delta].extend(rows[test] @ w)
    best_delta = None
    best_mean = -np.inf
    for delta in deltas:
        mean = float(np.mean(held_out[delta]))
        if mean > best_mean:
            best_delta, best_mean = delta, mean
    return best_delta


def _estimate_theta(rows: np.ndarray, cfg: BacktestConfig) -> tuple[np.ndarray, np.ndarray]:
    mu_hat, s = _window_moments(rows)
    if cfg.estimator is EstimatorKind.SAMPLE:
        try:
            return mu_hat, inv_pd(s)
        except NotPositiveDefinite as exc:
            raise SingularSampleCovariance(
                "sample covariance is singular; use the diagonal or low-rank estimator"
            ) from exc
    if cfg.estimator is EstimatorKind.DIAGONAL:
        variances = np.diag(s)
        if np.any(variances <= 0.0):
            raise InvalidInput("an asset has zero variance in the estimation window")
        return mu_hat, np.diag(1.0 / variances)
    delta = cv_select(rows, cfg.delta_grid, cfg.candidate_ranks, cfg.mu0, cfg.fit)
    return mu_hat, _low_rank_theta(s, rows.shape[0], cfg.candidate_ranks, delta, cfg.fit)


def rolling_backtest(panel: ReturnsPanel, cfg: BacktestConfig = BacktestConfig()) -> PortfolioResult:
    """Walk the panel, building one portfolio per period after the window.

    For each period t past the training window, the mean and precision
    matrix come from the preceding ``cfg.window`` rows only, weights are the
    closed-form Markowitz solution at ``cfg.mu0``, and the realized return
    is the weighted period-t return. Deterministic: same panel and config,
    same result.
    """
    t_total = panel.n_periods
    if cfg.window >= t_total:
        raise InvalidInput("window must be shorter than the panel")
    dates = []
    weights = []
    realized = []
    for t in range(cfg.window, t_total):
        window_rows = panel.returns[t - cfg.window : t]
        mu_hat, theta = _estimate_theta(window_rows, cfg)
        w = markowitz_weights(theta, mu_hat, cfg.mu0)
        dates.append(panel.dates[t])
        weights.append(w)
        realized.append(float(panel.returns[t] @ w))

    realized = np.asarray(realized)
    mean = float(realized.mean())
    stderr = float(realized.std(ddof=1) / np.sqrt(realized.size)) if realized.size > 1 else 0.0
    sharpe = sharpe_ratio(realized) if realized.size > 1 and realized.std(ddof=1) > 0 else np.nan
    return PortfolioResult(
        dates=tuple(dates),
        weights=np.asarray(weights),
        realized_returns=realized,
        mean_return=mean,
        stderr=stderr,
        sharpe=float(sharpe),
    )
