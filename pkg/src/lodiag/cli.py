"""Command-line interface: estimate, simulate, rank-recovery, backtest.

Exit codes: 0 on success, 1 on usage errors (bad flags or flag values),
2 on data or numeric errors (unreadable files, parse failures, singular
matrices). All randomness is controlled by --seed; identical invocations
produce identical outputs, including under --threads > 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import LodiagError
from .estimator import FitConfig, fit_rank_penalized
from .linalg import sample_covariance, sym_eig
from .portfolio import BacktestConfig, EstimatorKind, ReturnsPanel, rolling_backtest
from .simulation import (
    DEFAULT_CANDIDATE_RANKS,
    DEFAULT_DELTA_GRID,
    SimulationSpec,
    rank_recovery,
    run_simulation,
)
from .portfolio import DEFAULT_BACKTEST_DELTAS, DEFAULT_BACKTEST_RANKS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from exc


def read_matrix_csv(path: str) -> np.ndarray:
    """Numeric CSV matrix with an optional header row (auto-detected)."""
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines:
        raise LodiagError(f"{path} is empty")

    def parse_row(line):
        return [float(tok) for tok in line.split(",")]

    try:
        first = parse_row(lines[0])
        rows = [first]
        start = 1
    except ValueError:
        rows = []
        start = 1  # non-numeric first row: treat as header
    for line in lines[start:]:
        try:
            rows.append(parse_row(line))
        except ValueError as exc:
            raise LodiagError(f"{path}: non-numeric matrix row {line!r}") from exc
    matrix = np.array(rows)
    if matrix.ndim != 2:
        raise LodiagError(f"{path}: rows have inconsistent lengths")
    return matrix


def write_matrix_csv(path: str, matrix: np.ndarray) -> None:
    """Full double precision (17 significant digits), so round-trips are lossless."""
    with open(path, "w") as out:
        for row in np.atleast_2d(matrix):
            out.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _fit_config(args) -> FitConfig:
    return FitConfig(
        bcd_tol=args.bcd_tol,
        bcd_max_iter=args.bcd_max_iter,
        newton_tol=args.newton_tol,
        newton_max_iter=args.newton_max_iter,
        rank_tol=args.rank_tol,
    )


def _add_fit_flags(parser) -> None:
    parser.add_argument("--bcd-tol", type=float, default=1e-7)
    parser.add_argument("--bcd-max-iter", type=int, default=500)
    parser.add_argument("--newton-tol", type=float, default=1e-8)
    parser.add_argument("--newton-max-iter", type=int, default=100)
    parser.add_argument("--rank-tol", type=float, default=1e-8)


def _cmd_estimate(args) -> int:
    if (args.data is None) == (args.cov is None):
        raise UsageError("estimate: provide exactly one of --data or --cov")
    if args.cov is not None:
        if args.n is None:
            raise UsageError("estimate: --n is required with --cov")
        s = read_matrix_csv(args.cov)
        n = args.n
    else:
        x = read_matrix_csv(args.data)
        if args.center:
            x = x - x.mean(axis=0)
        s = sample_covariance(x)
        n = args.n if args.n is not None else x.shape[0]

    ranks = _int_list(args.ranks)
    fit = fit_rank_penalized(s, ranks, n, args.delta, _fit_config(args))
    if args.out:
        write_matrix_csv(args.out, fit.theta)

    eigenvalues = sym_eig(fit.decomposition.L).values
    lines = [
        f"candidate_rank,{fit.candidate_rank}",
        f"realized_rank,{fit.decomposition.rank}",
        f"objective,{fit.objective:.17g}",
        f"penalty,{fit.penalty:.17g}",
        f"converged,{fit.converged}",
        f"iterations,{fit.iterations}",
        "l_eigenvalues," + ",".join(f"{v:.17g}" for v in eigenvalues),
        "d_diagonal," + ",".join(f"{v:.17g}" for v in fit.decomposition.d),
    ]
    if args.format == "table":
        width = max(len(line.split(",", 1)[0]) for line in lines)
        lines = [f"{k:<{width}}  {v}" for k, v in (line.split(",", 1) for line in lines)]
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _simulation_spec(args) -> SimulationSpec:
    return SimulationSpec(
        example_id=args.example,
        p=args.p,
        n=args.n,
        reps=args.reps,
        seed=args.seed,
        n_valid=args.n_valid,
        delta_grid=tuple(_float_list(args.deltas)),
        candidate_ranks=tuple(_int_list(args.ranks)),
    )


def _cmd_simulate(args) -> int:
    table = run_simulation(_simulation_spec(args), _fit_config(args), threads=args.threads)
    text = table.to_csv() if args.format == "csv" else table.format_table()
    _write_output(text, args.out)
    return 0


def _cmd_rank_recovery(args) -> int:
    report = rank_recovery(_simulation_spec(args), k=args.k, cfg=_fit_config(args), threads=args.threads)
    _write_output(report.to_csv(), args.out)
    sys.stdout.write(f"modal realized rank: {report.modal_rank}\n")
    return 0


def _cmd_backtest(args) -> int:
    panel = ReturnsPanel.from_csv(Path(args.panel).read_text())
    cfg = BacktestConfig(
        window=args.window,
        mu0=args.mu0,
        estimator=EstimatorKind(args.estimator),
        candidate_ranks=tuple(_int_list(args.ranks)),
        delta_grid=tuple(_float_list(args.deltas)),
        fit=_fit_config(args),
    )
    result = rolling_backtest(panel, cfg)
    if args.out:
        Path(args.out).write_text(result.to_csv(panel.assets))
    sys.stdout.write(result.format_summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lodiag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit a precision matrix to data or a covariance")
    est.add_argument("--data", help="CSV of observations (rows = samples)")
    est.add_argument("--cov", help="CSV of a precomputed covariance matrix")
    est.add_argument("--center", action="store_true", help="subtract column means from --data")
    est.add_argument("--n", type=int, help="sample size (required with --cov)")
    est.add_argument("--ranks", default="1,3,5,7,9", help="comma-separated candidate ranks")
    est.add_argument("--delta", type=float, default=1.0, help="rank penalty scale")
    est.add_argument("--out", help="write the fitted precision matrix CSV here")
    est.add_argument("--format", choices=("csv", "table"), default="csv")
    _add_fit_flags(est)
    est.set_defaults(func=_cmd_estimate)

    def add_sim_flags(p):
        p.add_argument("--example", type=int, required=True, choices=(1, 2, 3, 4, 5))
        p.add_argument("--p", type=int, required=True)
        p.add_argument("--n", type=int, default=100)
        p.add_argument("--n-valid", type=int, default=100)
        p.add_argument("--reps", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deltas", default=",".join(str(d) for d in DEFAULT_DELTA_GRID))
        p.add_argument("--ranks", default=",".join(str(r) for r in DEFAULT_CANDIDATE_RANKS))
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", help="output path (default: stdout)")
        _add_fit_flags(p)

    sim = sub.add_parser("simulate", help="replicated KL-loss benchmark on a synthetic design")
    add_sim_flags(sim)
    sim.add_argument("--format", choices=("csv", "table"), default="csv")
    sim.set_defaults(func=_cmd_simulate)

    rank = sub.add_parser("rank-recovery", help="spectrum recovery report on a synthetic design")
    add_sim_flags(rank)
    rank.add_argument("--k", type=int, default=10, help="number of top eigenvalues to track")
    rank.set_defaults(func=_cmd_rank_recovery)

    back = sub.add_parser("backtest", help="rolling-window Markowitz backtest on a returns panel")
    back.add_argument("--panel", required=True, help="returns panel CSV (date,asset,...)")
    back.add_argument("--window", type=int, default=72)
    back.add_argument("--mu0", type=float, default=0.013)
    back.add_argument(
        "--estimator", choices=tuple(kind.value for kind in EstimatorKind), default="ld"
    )
    back.add_argument("--ranks", default=",".join(str(r) for r in DEFAULT_BACKTEST_RANKS))
    back.add_argument("--deltas", default=",".join(str(d) for d in DEFAULT_BACKTEST_DELTAS))
    back.add_argument("--out", help="write per-period returns and weights CSV here")
    _add_fit_flags(back)
    back.set_defaults(func=_cmd_backtest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        message = str(exc)
        if "usage:" not in message:
            message = f"{parser.format_usage()}lodiag: error: {message}"
        print(message, file=sys.stderr)
        return 1
    except (LodiagError, OSError, ValueError) as exc:
        print(f"lodiag: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
