"""Cointegrated pairs trading with Black-Litterman portfolio weights."""

__version__ = "0.1.0"

from .backtest import BacktestConfig, CostModel, EquityCurve, frequency_sweep, metrics, run
from .blacklitterman import ActiveView, Posterior, PriorEstimate, ViewSet, build_views, estimate_prior, posterior
from .cointegration import OuParams, adf_test, engle_granger, fit_ou, scan_pairs, select_pairs
from .errors import PairsBLError
from .marketdata import PricePanel, UniverseSpec, compute_returns, load_prices, load_universe, prescreen
from .metrics import PerformanceReport, performance
from .optimizer import OptimalWeights, OptimizationProblem, brute_force_oracle, kkt_residual, solve
from .signals import SScoreThresholds, s_score, step

__all__ = [
    "ActiveView", "BacktestConfig", "CostModel", "EquityCurve", "OptimalWeights", "OptimizationProblem",
    "OuParams", "PairsBLError", "PerformanceReport", "Posterior", "PricePanel", "PriorEstimate",
    "SScoreThresholds", "UniverseSpec", "ViewSet", "adf_test", "brute_force_oracle", "build_views",
    "compute_returns", "engle_granger", "estimate_prior", "fit_ou", "frequency_sweep", "kkt_residual",
    "load_prices", "load_universe", "metrics", "performance", "posterior", "prescreen", "run",
    "s_score", "scan_pairs", "select_pairs", "solve", "step",
]
