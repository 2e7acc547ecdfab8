"""Precision and covariance matrix estimation with a low-rank plus diagonal
decomposition, plus simulation benchmarks and a Markowitz backtester."""

from .errors import (
    DegenerateReturns,
    InfeasibleConstraints,
    InvalidInput,
    LodiagError,
    NotPositiveDefinite,
    SingularSampleCovariance,
)
from .estimator import (
    FitConfig,
    FitResult,
    PrecisionDecomposition,
    fit_fixed_rank,
    fit_rank_penalized,
    fit_rank_sweep,
    objective,
    precision_parts_from_covariance,
    rank_penalty,
    select_penalized,
    update_D,
    update_L,
)
from .linalg import (
    EigenPairs,
    chol_pd,
    inv_pd,
    logdet_pd,
    sample_covariance,
    sym_eig,
)
from .portfolio import (
    BacktestConfig,
    EstimatorKind,
    PortfolioResult,
    ReturnsPanel,
    cv_select,
    markowitz_weights,
    rolling_backtest,
    sharpe_ratio,
)
from .simulation import (
    GroundTruth,
    LossTable,
    RankRecoveryReport,
    SimulationSpec,
    kl_loss,
    make_sigma,
    rank_recovery,
    run_benchmark,
    run_simulation,
    sample_mvn,
)

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "DegenerateReturns",
    "EigenPairs",
    "EstimatorKind",
    "FitConfig",
    "FitResult",
    "GroundTruth",
    "InfeasibleConstraints",
    "InvalidInput",
    "LodiagError",
    "LossTable",
    "NotPositiveDefinite",
    "PortfolioResult",
    "PrecisionDecomposition",
    "RankRecoveryReport",
    "ReturnsPanel",
    "SimulationSpec",
    "SingularSampleCovariance",
    "chol_pd",
    "cv_select",
    "fit_fixed_rank",
    "fit_rank_penalized",
    "fit_rank_sweep",
    "inv_pd",
    "kl_loss",
    "logdet_pd",
    "make_sigma",
    "markowitz_weights",
    "objective",
    "precision_parts_from_covariance",
    "rank_penalty",
    "rank_recovery",
    "rolling_backtest",
    "run_benchmark",
    "run_simulation",
    "sample_covariance",
    "sample_mvn",
    "select_penalized",
    "sharpe_ratio",
    "sym_eig",
    "update_D",
    "update_L",
]
